//! Live editing of a trained automaton: direction, speed, brush, per-cell
//! rotation and resolution changes. Edits apply between steps only.

use std::collections::VecDeque;

use image::RgbImage;

use crate::error::{Error, Result};
use crate::fields::lattice;
use crate::grid::Grid;
use crate::imaging::state_to_rgb8;
use crate::model::{make_seed, DyncaConfig, Engine, NcaState, RngKey, Steering, UpdateRule};
use crate::scalar::Scalar;

/// Per-cell rotation source.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum LocalTransform<T = f32> {
    #[default]
    None,
    /// `θ(i, j) = arctan((i − W/2) / (j − H/2))`, turning rightward motion
    /// into motion around the grid centre.
    CircularFromRight,
    /// User-supplied `H × W × 1` angle map in radians.
    Map(Grid<T>),
}

/// One queued brush event, in cell coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BrushStroke {
    pub row: f64,
    pub col: f64,
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControlState<T = f32> {
    theta: T,
    transform: LocalTransform<T>,
    theta_map: Option<Grid<T>>,
    t_live: usize,
    brush: VecDeque<BrushStroke>,
}

/// Angle map of [`LocalTransform::CircularFromRight`] for an `h × w` grid,
/// with `i`, `j` the cell-centre offsets along the width and height. The
/// centre cell of an odd grid (`0/0`) gets angle 0.
pub fn circular_from_right<T: Scalar>(h: usize, w: usize) -> Grid<T> {
    Grid::from_fn(h, w, 1, |r, c, _| {
        let (i, j) = lattice(r, c, h, w);
        let t = (i / j).atan();
        T::lit(if t.is_nan() { 0.0 } else { t })
    })
}

impl<T: Scalar> ControlState<T> {
    /// Neutral controls emitting one frame every `t_live` steps.
    pub fn new(t_live: usize) -> Result<Self> {
        check_speed(t_live)?;
        Ok(Self {
            theta: T::zero(),
            transform: LocalTransform::None,
            theta_map: None,
            t_live,
            brush: VecDeque::new(),
        })
    }

    pub fn theta(&self) -> T {
        self.theta
    }

    pub fn t_live(&self) -> usize {
        self.t_live
    }

    pub fn transform(&self) -> &LocalTransform<T> {
        &self.transform
    }

    pub fn theta_map(&self) -> Option<&Grid<T>> {
        self.theta_map.as_ref()
    }

    pub fn pending_brushes(&self) -> usize {
        self.brush.len()
    }

    pub fn set_direction(&mut self, theta: T) {
        self.theta = theta;
    }

    pub fn set_speed(&mut self, t_live: usize) -> Result<()> {
        check_speed(t_live)?;
        self.t_live = t_live;
        Ok(())
    }

    /// Installs a per-cell transform for an `h × w` state.
    pub fn set_local_transform(&mut self, kind: LocalTransform<T>, h: usize, w: usize) -> Result<()> {
        self.theta_map = resolve(&kind, h, w)?;
        self.transform = kind;
        Ok(())
    }

    /// Re-derives the angle map after the state changed size. A user map of
    /// the old size is an error and leaves the controls untouched.
    pub fn fit_extent(&mut self, h: usize, w: usize) -> Result<()> {
        self.theta_map = resolve(&self.transform, h, w)?;
        Ok(())
    }

    pub fn queue_brush(&mut self, stroke: BrushStroke) -> Result<()> {
        check_stroke((stroke.row, stroke.col), stroke.radius)?;
        self.brush.push_back(stroke);
        Ok(())
    }

    /// Applies and clears the queued brush events.
    pub fn drain_brushes(&mut self, state: &mut NcaState<T>) -> Result<()> {
        while let Some(b) = self.brush.pop_front() {
            brush_erase(state, (b.row, b.col), b.radius)?;
        }
        Ok(())
    }

    /// Steering for the next step: the global angle composed with the map.
    pub fn steering(&self) -> Steering<T> {
        match &self.theta_map {
            Some(map) if self.theta == T::zero() => Steering::PerCell(map.clone()),
            Some(map) => Steering::PerCell(map.map(|a| a + self.theta)),
            None if self.theta == T::zero() => Steering::None,
            None => Steering::Global(self.theta),
        }
    }
}

fn check_speed(t_live: usize) -> Result<()> {
    if t_live == 0 {
        return Err(Error::Invalid("steps per frame must be at least 1".into()));
    }
    Ok(())
}

fn check_stroke(center: (f64, f64), radius: f64) -> Result<()> {
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::Invalid(format!("brush radius must be positive, got {radius}")));
    }
    if !(center.0.is_finite() && center.1.is_finite()) {
        return Err(Error::Invalid(format!("brush centre must be finite, got {center:?}")));
    }
    Ok(())
}

fn resolve<T: Scalar>(kind: &LocalTransform<T>, h: usize, w: usize) -> Result<Option<Grid<T>>> {
    match kind {
        LocalTransform::None => Ok(None),
        LocalTransform::CircularFromRight => Ok(Some(circular_from_right(h, w))),
        LocalTransform::Map(m) if m.shape() == (h, w, 1) => Ok(Some(m.clone())),
        LocalTransform::Map(m) => Err(Error::Shape(format!(
            "angle map {:?} does not match a {h}x{w} state",
            m.shape()
        ))),
    }
}

/// Resets every channel of the cells within `radius` of `center` (row, col)
/// to the seed value. The step counter is kept.
pub fn brush_erase<T: Scalar>(state: &mut NcaState<T>, center: (f64, f64), radius: f64) -> Result<()> {
    check_stroke(center, radius)?;
    let (h, w, _) = state.grid.shape();
    let r2 = radius * radius;
    let span = |mid: f64, n: usize| {
        let lo = (mid - radius).ceil().max(0.0);
        let hi = (mid + radius).floor() + 1.0;
        lo.min(n as f64) as usize..hi.clamp(0.0, n as f64) as usize
    };
    for r in span(center.0, h) {
        for c in span(center.1, w) {
            let (dr, dc) = (r as f64 - center.0, c as f64 - center.1);
            if dr * dr + dc * dc <= r2 {
                state.grid.pixel_mut(r, c).fill(T::zero());
            }
        }
    }
    Ok(())
}

/// A fresh seed at the new size; the old state is discarded.
pub fn resize_state<T: Scalar>(cfg: &DyncaConfig, new_h: usize, new_w: usize) -> Result<NcaState<T>> {
    make_seed(cfg, new_h, new_w)
}

/// A running synthesis: engine, state, mask stream and controls.
#[derive(Clone, Debug)]
pub struct Player<T = f32> {
    engine: Engine<T>,
    state: NcaState<T>,
    rng: RngKey,
    ctrl: ControlState<T>,
}

impl<T: Scalar> Player<T> {
    pub fn new(cfg: DyncaConfig, rule: UpdateRule<T>, h: usize, w: usize, seed: u64) -> Result<Self> {
        let t = cfg.frame_interval;
        let engine = Engine::new(cfg, rule)?;
        let state = make_seed(&engine.cfg, h, w)?;
        Ok(Self {
            engine,
            state,
            rng: RngKey::new(seed),
            ctrl: ControlState::new(t)?,
        })
    }

    pub fn engine(&self) -> &Engine<T> {
        &self.engine
    }

    pub fn state(&self) -> &NcaState<T> {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut NcaState<T> {
        &mut self.state
    }

    pub fn controls(&self) -> &ControlState<T> {
        &self.ctrl
    }

    pub fn controls_mut(&mut self) -> &mut ControlState<T> {
        &mut self.ctrl
    }

    pub fn step_index(&self) -> u64 {
        self.state.step
    }

    /// One step under the current controls, after applying queued brushes.
    pub fn step(&mut self) -> Result<()> {
        self.ctrl.drain_brushes(&mut self.state)?;
        let steering = self.ctrl.steering();
        self.engine.step_in_place(&mut self.state, &self.rng, &steering)
    }

    /// Runs `t_live` steps and renders the result.
    pub fn next_frame(&mut self) -> Result<RgbImage> {
        for _ in 0..self.ctrl.t_live() {
            self.step()?;
        }
        Ok(self.frame())
    }

    pub fn frame(&self) -> RgbImage {
        state_to_rgb8(&self.state.grid)
    }

    /// Restarts from a seed of the new size; per-cell transforms follow.
    pub fn resize(&mut self, h: usize, w: usize) -> Result<()> {
        let state = resize_state(&self.engine.cfg, h, w)?;
        let mut ctrl = self.ctrl.clone();
        ctrl.fit_extent(h, w)?;
        ctrl.brush.clear();
        self.state = state;
        self.ctrl = ctrl;
        Ok(())
    }

    /// Swaps in new weights and restarts from a seed of the current size.
    pub fn load_rule(&mut self, cfg: DyncaConfig, rule: UpdateRule<T>) -> Result<()> {
        let (h, w) = (self.state.height(), self.state.width());
        let engine = Engine::new(cfg, rule)?;
        let state = make_seed(&engine.cfg, h, w)?;
        self.engine = engine;
        self.state = state;
        self.ctrl.brush.clear();
        Ok(())
    }
}
