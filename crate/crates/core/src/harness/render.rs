use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::Rng;

use crate::cvae::{encode_input, sample_prediction, InputEncoding, TransitionModel};
use crate::envs::{Action, Cell, GridLayout, GridState};
use crate::error::Result;
use crate::metrics::DistTable;

const CELL: usize = 48;
const MARGIN: usize = 24;
const COLORS: [&str; 3] = ["#2ca02c", "#d62728", "#1f77b4"];

/// Per-entity next-cell marginals, indexed `[entity][x][y]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginals(pub [[[f64; 7]; 7]; 3]);

impl Marginals {
    /// Relative frequencies of each entity's cell in raw outcome rows.
    pub fn from_samples(samples: &Array2<f64>) -> Self {
        let mut m = [[[0.0; 7]; 7]; 3];
        let w = 1.0 / samples.nrows().max(1) as f64;
        for r in samples.rows() {
            for (e, slot) in m.iter_mut().enumerate() {
                let (x, y) = (r[2 * e] as usize, r[2 * e + 1] as usize);
                if x < 7 && y < 7 {
                    slot[x][y] += w;
                }
            }
        }
        Marginals(m)
    }

    pub fn from_dist(d: &DistTable<GridState>) -> Self {
        let mut m = [[[0.0; 7]; 7]; 3];
        for (s, p) in d.iter() {
            for (e, c) in [s.agent, s.ghost1, s.ghost2].into_iter().enumerate() {
                m[e][c[0] as usize][c[1] as usize] += p;
            }
        }
        Marginals(m)
    }

    pub fn entity(&self, e: usize) -> &[[f64; 7]; 7] {
        &self.0[e]
    }
}

/// Model draws for one `(state, action)` as raw outcome rows.
pub fn predict_samples<R: Rng + ?Sized>(
    model: &TransitionModel,
    state: &GridState,
    action: Action,
    n: usize,
    rng: &mut R,
) -> Result<Array2<f64>> {
    let x = encode_input(&InputEncoding::GridStateAction, &state.with_action(action))?;
    sample_prediction(model, &x, n, rng)
}

fn origin(c: Cell) -> (usize, usize) {
    (MARGIN + c[0] as usize * CELL, MARGIN + (6 - c[1] as usize) * CELL)
}

/// Static SVG 1.1 board: walls black, current positions as circles,
/// predicted next cells as boxes whose opacity is the marginal probability.
pub fn render_svg(layout: &GridLayout, state: &GridState, action: Option<Action>, marginals: &Marginals) -> String {
    let size = 2 * MARGIN + 7 * CELL;
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8" standalone="no"?>"#);
    let _ = writeln!(
        s,
        r#"<!DOCTYPE svg PUBLIC "-//W3C//DTD SVG 1.1//EN" "http://www.w3.org/Graphics/SVG/1.1/DTD/svg11.dtd">"#
    );
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{size}" height="{size}" viewBox="0 0 {size} {size}">"#
    );
    let title = action.map_or("".to_string(), |a| a.name().to_string());
    let _ = writeln!(s, r#"<title>{title}</title>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="14" text-anchor="middle">{title}</text>"#,
        size / 2,
        MARGIN - 6
    );
    for x in 0..7u8 {
        for y in 0..7u8 {
            let (px, py) = origin([x, y]);
            let fill = if layout.is_wall([x, y]) { "#000000" } else { "#ffffff" };
            let _ = writeln!(
                s,
                r##"<rect x="{px}" y="{py}" width="{CELL}" height="{CELL}" fill="{fill}" stroke="#999999" stroke-width="1"/>"##
            );
        }
    }
    let inset = [2usize, 8, 14];
    for (e, color) in COLORS.iter().enumerate() {
        let m = marginals.entity(e);
        for x in 0..7u8 {
            for y in 0..7u8 {
                let p = m[x as usize][y as usize];
                if p <= 0.0 {
                    continue;
                }
                let (px, py) = origin([x, y]);
                let side = CELL - 2 * inset[e];
                let _ = writeln!(
                    s,
                    r#"<rect class="prediction" x="{}" y="{}" width="{side}" height="{side}" fill="{color}" fill-opacity="{:.4}" data-entity="{e}" data-probability="{p:.6}"/>"#,
                    px + inset[e],
                    py + inset[e],
                    p.min(1.0)
                );
            }
        }
    }
    for (e, c) in [state.agent, state.ghost1, state.ghost2].into_iter().enumerate() {
        let (px, py) = origin(c);
        let _ = writeln!(
            s,
            r##"<circle cx="{}" cy="{}" r="{}" fill="{}" stroke="#ffffff" stroke-width="2"/>"##,
            px + CELL / 2,
            py + CELL / 2,
            CELL / 5,
            COLORS[e]
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes one SVG per `(state, action)` into `dir`, marginals estimated
/// from `samples` model draws each.
pub fn render_grid_predictions<R: Rng + ?Sized>(
    model: &TransitionModel,
    layout: &GridLayout,
    pairs: &[(GridState, Action)],
    samples: usize,
    dir: &Path,
    rng: &mut R,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut out = Vec::with_capacity(pairs.len());
    for (i, (state, action)) in pairs.iter().enumerate() {
        let draws = predict_samples(model, state, *action, samples, rng)?;
        let svg = render_svg(layout, state, Some(*action), &Marginals::from_samples(&draws));
        let path = dir.join(format!("prediction-{i:03}.svg"));
        std::fs::write(&path, svg)?;
        out.push(path);
    }
    Ok(out)
}
