//! Static vector-graphics renderers and the trajectory CSV format.
//!
//! Trajectory files carry one row per step per agent
//! (`episode,step,agent_id,x,y,vx,vy`) plus optional `#`-prefixed metadata
//! lines (`# agent <id> radius <r> goal <gx> <gy>`) that enable goal markers
//! and collision highlighting when rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::harness::HarnessError;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajRow {
    pub episode: usize,
    pub step: usize,
    pub agent_id: usize,
    pub x: Scalar,
    pub y: Scalar,
    pub vx: Scalar,
    pub vy: Scalar,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentMeta {
    pub agent_id: usize,
    pub radius: Scalar,
    pub goal: (Scalar, Scalar),
}

pub fn write_trajectory_csv(
    out: &mut String,
    rows: &[TrajRow],
    meta: &[AgentMeta],
) {
    for m in meta {
        let _ = writeln!(
            out,
            "# agent {} radius {} goal {} {}",
            m.agent_id, m.radius, m.goal.0, m.goal.1
        );
    }
    let _ = writeln!(out, "episode,step,agent_id,x,y,vx,vy");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.episode, r.step, r.agent_id, r.x, r.y, r.vx, r.vy
        );
    }
}

/// Parses a trajectory CSV; errors carry 1-based line numbers.
pub fn parse_trajectory_csv(text: &str) -> Result<(Vec<TrajRow>, Vec<AgentMeta>), HarnessError> {
    let mut rows = Vec::new();
    let mut meta = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let fields: Vec<&str> = rest.split_whitespace().collect();
            if fields.len() == 7 && fields[0] == "agent" && fields[2] == "radius" && fields[4] == "goal" {
                let parse = |f: &str, what: &str| -> Result<Scalar, HarnessError> {
                    f.parse().map_err(|_| HarnessError::CsvParse {
                        line: line_no,
                        message: format!("bad {what} value {f:?}"),
                    })
                };
                meta.push(AgentMeta {
                    agent_id: fields[1].parse().map_err(|_| HarnessError::CsvParse {
                        line: line_no,
                        message: format!("bad agent id {:?}", fields[1]),
                    })?,
                    radius: parse(fields[3], "radius")?,
                    goal: (parse(fields[5], "goal x")?, parse(fields[6], "goal y")?),
                });
            }
            continue;
        }
        if line.starts_with("episode,") {
            continue; // header
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(HarnessError::CsvParse {
                line: line_no,
                message: format!("expected 7 fields, found {}", fields.len()),
            });
        }
        let int = |i: usize, what: &str| -> Result<usize, HarnessError> {
            fields[i].trim().parse().map_err(|_| HarnessError::CsvParse {
                line: line_no,
                message: format!("bad {what} value {:?}", fields[i]),
            })
        };
        let num = |i: usize, what: &str| -> Result<Scalar, HarnessError> {
            fields[i].trim().parse().map_err(|_| HarnessError::CsvParse {
                line: line_no,
                message: format!("bad {what} value {:?}", fields[i]),
            })
        };
        rows.push(TrajRow {
            episode: int(0, "episode")?,
            step: int(1, "step")?,
            agent_id: int(2, "agent_id")?,
            x: num(3, "x")?,
            y: num(4, "y")?,
            vx: num(5, "vx")?,
            vy: num(6, "vy")?,
        });
    }
    Ok((rows, meta))
}

const SVG_SIZE: Scalar = 640.0;
const SVG_MARGIN: Scalar = 40.0;
const AGENT_COLORS: [&str; 8] = [
    "#c0392b", "#2980b9", "#27ae60", "#8e44ad", "#d35400", "#16a085", "#7f8c8d", "#f39c12",
];

struct Frame {
    min_x: Scalar,
    min_y: Scalar,
    scale: Scalar,
}

impl Frame {
    fn fit(points: impl Iterator<Item = (Scalar, Scalar)>) -> Frame {
        let mut min_x = Scalar::INFINITY;
        let mut max_x = Scalar::NEG_INFINITY;
        let mut min_y = Scalar::INFINITY;
        let mut max_y = Scalar::NEG_INFINITY;
        for (x, y) in points {
            min_x = min_x.min(x);
            max_x = max_x.max(x);
            min_y = min_y.min(y);
            max_y = max_y.max(y);
        }
        if !min_x.is_finite() {
            // Empty input: unit frame around the origin.
            min_x = -1.0;
            max_x = 1.0;
            min_y = -1.0;
            max_y = 1.0;
        }
        let span = (max_x - min_x).max(max_y - min_y).max(1e-9);
        Frame {
            min_x,
            min_y,
            scale: (SVG_SIZE - 2.0 * SVG_MARGIN) / span,
        }
    }

    fn px(&self, x: Scalar) -> Scalar {
        SVG_MARGIN + (x - self.min_x) * self.scale
    }

    /// Flips y so world +y points up on screen.
    fn py(&self, y: Scalar) -> Scalar {
        SVG_SIZE - SVG_MARGIN - (y - self.min_y) * self.scale
    }
}

/// Draws agent paths with per-step labels, start and goal markers, and
/// collision markers (when radii metadata is present). Labels are attached
/// to a per-agent optional `annotations` map (the attention weights).
pub fn render_trajectories(
    rows: &[TrajRow],
    meta: &[AgentMeta],
    annotations: &BTreeMap<(usize, usize), String>,
) -> String {
    let frame = Frame::fit(
        rows.iter()
            .map(|r| (r.x, r.y))
            .chain(meta.iter().map(|m| (m.goal.0, m.goal.1))),
    );

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_SIZE}\" height=\"{SVG_SIZE}\" \
         viewBox=\"0 0 {SVG_SIZE} {SVG_SIZE}\">"
    );
    let _ = writeln!(
        svg,
        "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\
         <rect x=\"{m}\" y=\"{m}\" width=\"{w}\" height=\"{w}\" fill=\"none\" stroke=\"#cccccc\"/>",
        m = SVG_MARGIN,
        w = SVG_SIZE - 2.0 * SVG_MARGIN
    );

    let radii: BTreeMap<usize, Scalar> = meta.iter().map(|m| (m.agent_id, m.radius)).collect();

    // Group rows by agent, keeping step order.
    let mut agents: BTreeMap<usize, Vec<&TrajRow>> = BTreeMap::new();
    for r in rows {
        agents.entry(r.agent_id).or_default().push(r);
    }
    for path in agents.values_mut() {
        path.sort_by_key(|r| r.step);
    }

    // Collision markers need pairwise clearance per step.
    let mut collisions: Vec<(Scalar, Scalar)> = Vec::new();
    if !radii.is_empty() {
        let mut by_step: BTreeMap<usize, Vec<&TrajRow>> = BTreeMap::new();
        for r in rows {
            by_step.entry(r.step).or_default().push(r);
        }
        for group in by_step.values() {
            for (i, a) in group.iter().enumerate() {
                for b in &group[i + 1..] {
                    let (Some(ra), Some(rb)) = (radii.get(&a.agent_id), radii.get(&b.agent_id))
                    else {
                        continue;
                    };
                    let d = ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt() - ra - rb;
                    if d < 0.0 {
                        collisions.push(((a.x + b.x) / 2.0, (a.y + b.y) / 2.0));
                    }
                }
            }
        }
    }

    for (agent_id, path) in &agents {
        let color = AGENT_COLORS[agent_id % AGENT_COLORS.len()];
        if path.len() > 1 {
            let points: Vec<String> = path
                .iter()
                .map(|r| format!("{:.2},{:.2}", frame.px(r.x), frame.py(r.y)))
                .collect();
            let _ = writeln!(
                svg,
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>",
                points.join(" ")
            );
        }
        // Start marker and per-step labels.
        if let Some(first) = path.first() {
            let _ = writeln!(
                svg,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"5\" fill=\"{color}\"/>",
                frame.px(first.x),
                frame.py(first.y)
            );
        }
        for r in path.iter() {
            let label = match annotations.get(&(r.agent_id, r.step)) {
                Some(a) => format!("{}:{a}", r.step),
                None => format!("{}", r.step),
            };
            let _ = writeln!(
                svg,
                "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"7\" fill=\"{color}\">{label}</text>",
                frame.px(r.x) + 3.0,
                frame.py(r.y) - 3.0
            );
        }
    }

    // Goal markers.
    for m in meta {
        let color = AGENT_COLORS[m.agent_id % AGENT_COLORS.len()];
        let (gx, gy) = (frame.px(m.goal.0), frame.py(m.goal.1));
        let _ = writeln!(
            svg,
            "<path d=\"M {x0} {y} L {x1} {y} M {x} {y0} L {x} {y1}\" stroke=\"{color}\" \
             stroke-width=\"2\"/>",
            x0 = gx - 6.0,
            x1 = gx + 6.0,
            y0 = gy - 6.0,
            y1 = gy + 6.0,
            x = gx,
            y = gy
        );
    }

    for (cx, cy) in &collisions {
        let (px, py) = (frame.px(*cx), frame.py(*cy));
        let _ = writeln!(
            svg,
            "<path d=\"M {x0} {y0} L {x1} {y1} M {x0} {y1} L {x1} {y0}\" stroke=\"black\" \
             stroke-width=\"2\"/>",
            x0 = px - 5.0,
            y0 = py - 5.0,
            x1 = px + 5.0,
            y1 = py + 5.0
        );
    }

    svg.push_str("</svg>\n");
    svg
}

/// Trailing moving average; `None` until the window fills.
pub fn moving_average(values: &[Scalar], window: usize) -> Vec<Option<Scalar>> {
    assert!(window > 0);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (i, &v) in values.iter().enumerate() {
        sum += v;
        if i + 1 > window {
            sum -= values[i - window];
        }
        out.push(if i + 1 >= window {
            Some(sum / window as Scalar)
        } else {
            None
        });
    }
    out
}

/// Reward-per-episode curve with its moving average overlaid.
pub fn render_reward_curve(rewards: &[Scalar], window: usize) -> String {
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_SIZE}\" height=\"{SVG_SIZE}\" \
         viewBox=\"0 0 {SVG_SIZE} {SVG_SIZE}\">"
    );
    let _ = writeln!(
        svg,
        "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\
         <rect x=\"{m}\" y=\"{m}\" width=\"{w}\" height=\"{w}\" fill=\"none\" stroke=\"#cccccc\"/>",
        m = SVG_MARGIN,
        w = SVG_SIZE - 2.0 * SVG_MARGIN
    );
    if !rewards.is_empty() {
        let min = rewards.iter().cloned().fold(Scalar::INFINITY, Scalar::min);
        let max = rewards
            .iter()
            .cloned()
            .fold(Scalar::NEG_INFINITY, Scalar::max);
        let span = (max - min).max(1e-9);
        let px = |i: usize| {
            SVG_MARGIN
                + i as Scalar / (rewards.len().max(2) - 1) as Scalar
                    * (SVG_SIZE - 2.0 * SVG_MARGIN)
        };
        let py = |v: Scalar| SVG_SIZE - SVG_MARGIN - (v - min) / span * (SVG_SIZE - 2.0 * SVG_MARGIN);

        let raw: Vec<String> = rewards
            .iter()
            .enumerate()
            .map(|(i, &v)| format!("{:.2},{:.2}", px(i), py(v)))
            .collect();
        let _ = writeln!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"#bbd4ee\" stroke-width=\"1\"/>",
            raw.join(" ")
        );
        let smooth: Vec<String> = moving_average(rewards, window)
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| format!("{:.2},{:.2}", px(i), py(v))))
            .collect();
        if !smooth.is_empty() {
            let _ = writeln!(
                svg,
                "<polyline points=\"{}\" fill=\"none\" stroke=\"#2c3e50\" stroke-width=\"2\"/>",
                smooth.join(" ")
            );
        }
        let _ = writeln!(
            svg,
            "<text x=\"{m}\" y=\"{y}\" font-size=\"11\" fill=\"#333333\">reward per episode \
             (window {window})</text>",
            m = SVG_MARGIN,
            y = SVG_MARGIN - 8.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}
