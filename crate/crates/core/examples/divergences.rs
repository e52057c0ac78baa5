//! Exact divergences between finite distributions and diagonal Gaussians.
//!
//! `cargo run --example divergences`

use stochweave::metrics::{empirical_dist, hellinger, kl_categorical, kl_gaussian_diag, DistTable};

fn main() -> stochweave::Result<()> {
    let q = DistTable::new(vec![("mode a", 0.999), ("mode b", 0.001)])?;
    let prior = DistTable::new(vec![("mode a", 0.3), ("mode b", 0.7)])?;
    println!("KL(q || prior) for a confident posterior: {:.4} nats", kl_categorical(&q, &prior));
    println!("Hellinger(q, prior): {:.4}", hellinger(&q, &prior));

    let p = DistTable::new(vec![(0, 0.5), (1, 0.5)])?;
    let point = DistTable::point_mass(0);
    println!("KL(p || point mass) = {} (missing support)", kl_categorical(&p, &point));
    println!("KL(point mass || p) = {:.4}", kl_categorical(&point, &p));

    let draws: Vec<u8> = (0..1000).map(|i| (i % 4 == 0) as u8).collect();
    let emp = empirical_dist(&draws)?;
    println!("empirical: {}", serde_json::to_string(&emp)?);

    let kl = kl_gaussian_diag(&[0.0, 0.0], &[2.0, 1.0], &[0.0, 1.0], &[1.0, 1.0])?;
    println!("KL(N([0,0],[2,1]) || N([0,1],[1,1])) = {kl:.4}");
    Ok(())
}
