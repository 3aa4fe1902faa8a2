//! Cooperative pong: a block paddle guards the left edge, a wedge ("cake")
//! paddle guards the right edge, and the pair is rewarded for every step the
//! ball stays in the arena.
//!
//! Physics runs in native pixel coordinates; observations are rasterized at
//! native resolution and area-averaged down to the render target.

use super::{Action, CoopEnv, EnvError, JointTransition, Observation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    /// Native arena size in pixels.
    pub arena_w: usize,
    pub arena_h: usize,
    /// Side of each agent's square observation.
    pub obs_size: usize,
    pub paddle_speed: f64,
    pub ball_speed: f64,
    pub ball_radius: f64,
    /// `(width, height)` of the left block paddle.
    pub block_paddle: (f64, f64),
    /// `(width, height)` of the right wedge paddle.
    pub cake_paddle: (f64, f64),
    /// Extra bounce angle (radians) at the tips of the wedge.
    pub cake_deflection: f64,
    /// Steepest angle from horizontal the wedge may send the ball at.
    pub max_bounce_angle: f64,
    pub max_cycles: usize,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            arena_w: 960,
            arena_h: 560,
            obs_size: 64,
            paddle_speed: 12.0,
            ball_speed: 9.0,
            ball_radius: 10.0,
            block_paddle: (20.0, 80.0),
            cake_paddle: (40.0, 120.0),
            cake_deflection: 0.5,
            max_bounce_angle: 60f64.to_radians(),
            max_cycles: 900,
            seed: 0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::Config(m.to_string()));
        if self.arena_w < 2 || self.arena_h == 0 || self.arena_w % 2 != 0 {
            return bad("arena width must be even and both sides positive");
        }
        if self.obs_size == 0 || self.obs_size > self.arena_w / 2 || self.obs_size > self.arena_h {
            return bad("render target must be positive and no larger than half the arena");
        }
        if !(self.paddle_speed > 0.0 && self.ball_speed > 0.0) {
            return bad("speeds must be positive");
        }
        if self.max_cycles == 0 {
            return bad("max_cycles must be positive");
        }
        if !(self.ball_radius > 0.0) || 2.0 * self.ball_radius >= self.arena_h as f64 {
            return bad("ball must fit inside the arena");
        }
        let (bw, bh) = self.block_paddle;
        let (cw, ch) = self.cake_paddle;
        let half = self.arena_w as f64 / 2.0;
        if !(bw > 0.0 && cw > 0.0 && bw < half && cw < half) {
            return bad("paddles must have positive width inside their half");
        }
        if !(bh > 0.0 && ch > 0.0 && bh <= self.arena_h as f64 && ch <= self.arena_h as f64) {
            return bad("paddle heights must fit the arena");
        }
        Ok(())
    }

    /// x of the wedge face at vertical offset `d` from the paddle centre.
    fn cake_face_x(&self, d: f64) -> f64 {
        let (cw, ch) = self.cake_paddle;
        let frac = (d.abs() / (ch / 2.0)).min(1.0);
        self.arena_w as f64 - cw + 0.5 * cw * frac
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub ball_pos: [f64; 2],
    pub ball_vel: [f64; 2],
    /// Centre row of each paddle.
    pub paddle_pos: [f64; 2],
    pub t: usize,
    pub done: bool,
}

/// Ball at the centre heading left or right within ±45° of horizontal,
/// both paddles centred.
pub fn reset(config: &EnvConfig, seed: u64) -> (EnvState, [Observation; 2]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let angle = rng.gen_range(-FRAC_PI_4..=FRAC_PI_4);
    let dir = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let (w, h) = (config.arena_w as f64, config.arena_h as f64);
    let state = EnvState {
        ball_pos: [w / 2.0, h / 2.0],
        ball_vel: [
            dir * config.ball_speed * angle.cos(),
            config.ball_speed * angle.sin(),
        ],
        paddle_pos: [h / 2.0; 2],
        t: 0,
        done: false,
    };
    let obs = [
        render_observation(config, &state, 0).unwrap(),
        render_observation(config, &state, 1).unwrap(),
    ];
    (state, obs)
}

/// Advances one tick: paddles move, the ball moves and bounces, then
/// termination and rewards are decided.
pub fn step(
    config: &EnvConfig,
    state: &mut EnvState,
    actions: [Action; 2],
) -> Result<JointTransition, EnvError> {
    if state.done {
        return Err(EnvError::EpisodeOver);
    }
    for a in actions {
        if !(-1..=1).contains(&a) {
            return Err(EnvError::InvalidAction(a));
        }
    }
    let (w, h) = (config.arena_w as f64, config.arena_h as f64);
    let r = config.ball_radius;

    let heights = [config.block_paddle.1, config.cake_paddle.1];
    for i in 0..2 {
        let half = heights[i] / 2.0;
        state.paddle_pos[i] = (state.paddle_pos[i] + f64::from(actions[i]) * config.paddle_speed)
            .clamp(half, h - half);
    }

    let prev_x = state.ball_pos[0];
    let [mut x, mut y] = state.ball_pos;
    let [mut vx, mut vy] = state.ball_vel;
    x += vx;
    y += vy;

    if y - r < 0.0 {
        y = 2.0 * r - y;
        vy = vy.abs();
    } else if y + r > h {
        y = 2.0 * (h - r) - y;
        vy = -vy.abs();
    }

    let (bw, bh) = config.block_paddle;
    if vx < 0.0 && prev_x - r >= bw && x - r < bw && (y - state.paddle_pos[0]).abs() <= bh / 2.0 + r
    {
        x = 2.0 * (bw + r) - x;
        vx = -vx;
    }

    let (_, ch) = config.cake_paddle;
    let d = y - state.paddle_pos[1];
    if vx > 0.0 && d.abs() <= ch / 2.0 + r {
        let face = config.cake_face_x(d);
        if prev_x + r <= face && x + r > face {
            let offset = (d / (ch / 2.0)).clamp(-1.0, 1.0);
            let angle = (vy.atan2(vx) + config.cake_deflection * offset)
                .clamp(-config.max_bounce_angle, config.max_bounce_angle);
            vx = -config.ball_speed * angle.cos();
            vy = config.ball_speed * angle.sin();
            x = face - r;
        }
    }

    state.ball_pos = [x, y];
    state.ball_vel = [vx, vy];
    state.t += 1;
    state.done = x < 0.0 || x > w || state.t >= config.max_cycles;
    let reward = if state.done {
        0.0
    } else {
        1.0 / config.max_cycles as f64
    };
    Ok(JointTransition {
        observations: [
            render_observation(config, state, 0)?,
            render_observation(config, state, 1)?,
        ],
        actions,
        rewards: [reward; 2],
        done: state.done,
    })
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Disk {
        cx: f64,
        cy: f64,
        r: f64,
    },
    Rect {
        x0: f64,
        y0: f64,
        x1: f64,
        y1: f64,
    },
    /// Right-edge wedge, tip pointing left at the paddle centre.
    Wedge {
        cy: f64,
        w: f64,
        h: f64,
        right: f64,
    },
}

impl Shape {
    fn bbox(&self) -> (f64, f64, f64, f64) {
        match *self {
            Shape::Disk { cx, cy, r } => (cx - r, cy - r, cx + r, cy + r),
            Shape::Rect { x0, y0, x1, y1 } => (x0, y0, x1, y1),
            Shape::Wedge { cy, w, h, right } => (right - w, cy - h / 2.0, right, cy + h / 2.0),
        }
    }

    fn contains(&self, px: f64, py: f64) -> bool {
        match *self {
            Shape::Disk { cx, cy, r } => (px - cx).powi(2) + (py - cy).powi(2) <= r * r,
            Shape::Rect { x0, y0, x1, y1 } => px >= x0 && px <= x1 && py >= y0 && py <= y1,
            Shape::Wedge { cy, w, h, right } => {
                let d = (py - cy).abs();
                d <= h / 2.0 && px <= right && px >= right - w + 0.5 * w * d / (h / 2.0)
            }
        }
    }
}

fn shapes(config: &EnvConfig, state: &EnvState) -> [Shape; 3] {
    let (bw, bh) = config.block_paddle;
    let (cw, ch) = config.cake_paddle;
    [
        Shape::Rect {
            x0: 0.0,
            y0: state.paddle_pos[0] - bh / 2.0,
            x1: bw,
            y1: state.paddle_pos[0] + bh / 2.0,
        },
        Shape::Wedge {
            cy: state.paddle_pos[1],
            w: cw,
            h: ch,
            right: config.arena_w as f64,
        },
        Shape::Disk {
            cx: state.ball_pos[0],
            cy: state.ball_pos[1],
            r: config.ball_radius,
        },
    ]
}

/// Native columns `[start, end)` seen by an agent.
pub fn crop_columns(config: &EnvConfig, agent: usize) -> Result<(usize, usize), EnvError> {
    let half = config.arena_w / 2;
    match agent {
        0 => Ok((0, half)),
        1 => Ok((half, config.arena_w)),
        other => Err(EnvError::InvalidAgent(other)),
    }
}

/// Native pixels `(column, row)` lit inside the agent's crop. A pixel is lit
/// when its centre falls inside any shape.
pub fn lit_pixels(
    config: &EnvConfig,
    state: &EnvState,
    agent: usize,
) -> Result<Vec<(usize, usize)>, EnvError> {
    let (c0, c1) = crop_columns(config, agent)?;
    let shapes = shapes(config, state);
    let mut lit = Vec::new();
    for (k, shape) in shapes.iter().enumerate() {
        let (bx0, by0, bx1, by1) = shape.bbox();
        let col_lo = (bx0.floor().max(c0 as f64)) as usize;
        let col_hi = (bx1.ceil().min(c1 as f64)).max(col_lo as f64) as usize;
        let row_lo = by0.floor().max(0.0) as usize;
        let row_hi = (by1.ceil().min(config.arena_h as f64)).max(row_lo as f64) as usize;
        for row in row_lo..row_hi {
            let py = row as f64 + 0.5;
            for col in col_lo..col_hi {
                let px = col as f64 + 0.5;
                if shape.contains(px, py) && !shapes[..k].iter().any(|s| s.contains(px, py)) {
                    lit.push((col, row));
                }
            }
        }
    }
    Ok(lit)
}

/// Area-average downscale of a sparse `src_w × src_h` image (pixels not
/// listed are black) onto an `out_h × out_w` grid.
pub fn area_downscale(
    src_w: usize,
    src_h: usize,
    out_h: usize,
    out_w: usize,
    pixels: impl IntoIterator<Item = (usize, usize, f64)>,
) -> Observation {
    let sx = src_w as f64 / out_w as f64;
    let sy = src_h as f64 / out_h as f64;
    let cell_area = sx * sy;
    let overlaps = |p: usize, scale: f64, n: usize| {
        let (lo, hi) = (p as f64, p as f64 + 1.0);
        let first = (lo / scale).floor() as usize;
        let last = ((hi / scale).ceil() as usize).min(n);
        (first..last).filter_map(move |c| {
            let o = (hi.min((c + 1) as f64 * scale) - lo.max(c as f64 * scale)).max(0.0);
            (o > 0.0).then_some((c, o))
        })
    };
    let mut out = Observation::zeros(out_h, out_w);
    for (col, row, value) in pixels {
        for (oc, wx) in overlaps(col, sx, out_w) {
            for (or, wy) in overlaps(row, sy, out_h) {
                out.pixels[or * out_w + oc] += value * wx * wy / cell_area;
            }
        }
    }
    for p in &mut out.pixels {
        *p = p.clamp(0.0, 1.0);
    }
    out
}

/// Rasterizes the scene, crops the agent's half and downscales it to
/// `obs_size × obs_size`.
pub fn render_observation(
    config: &EnvConfig,
    state: &EnvState,
    agent: usize,
) -> Result<Observation, EnvError> {
    let (c0, c1) = crop_columns(config, agent)?;
    let lit = lit_pixels(config, state, agent)?;
    Ok(area_downscale(
        c1 - c0,
        config.arena_h,
        config.obs_size,
        config.obs_size,
        lit.into_iter().map(|(c, r)| (c - c0, r, 1.0)),
    ))
}

/// [`CoopEnv`] wrapper owning a config and the live state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PongEnv {
    pub config: EnvConfig,
    pub state: EnvState,
}

impl PongEnv {
    pub fn new(config: EnvConfig) -> Result<Self, EnvError> {
        config.validate()?;
        let (state, _) = reset(&config, config.seed);
        Ok(Self { config, state })
    }
}

impl CoopEnv for PongEnv {
    fn obs_shape(&self) -> (usize, usize) {
        (self.config.obs_size, self.config.obs_size)
    }

    fn max_cycles(&self) -> usize {
        self.config.max_cycles
    }

    fn reset(&mut self, seed: u64) -> [Observation; 2] {
        let (state, obs) = reset(&self.config, seed);
        self.state = state;
        obs
    }

    fn step(&mut self, actions: [Action; 2]) -> Result<JointTransition, EnvError> {
        step(&self.config, &mut self.state, actions)
    }

    fn observations(&self) -> [Observation; 2] {
        [
            render_observation(&self.config, &self.state, 0).unwrap(),
            render_observation(&self.config, &self.state, 1).unwrap(),
        ]
    }
}
