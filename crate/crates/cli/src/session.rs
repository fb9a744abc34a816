//! One synthesis session: a player plus the command semantics of the socket.

use dynca::checkpoint::load_checkpoint;
use dynca::controls::{BrushStroke, LocalTransform};
use dynca::grid::Grid;
use dynca::imaging::RgbImage;
use dynca::Player;

use crate::protocol::{parse_command, Command, Reply, TransformKind};

pub struct Session {
    player: Player,
}

impl Session {
    pub fn new(player: Player) -> Self {
        Self { player }
    }

    pub fn player(&self) -> &Player {
        &self.player
    }

    pub fn step_index(&self) -> u64 {
        self.player.step_index()
    }

    /// Runs one frame's worth of steps.
    pub fn advance(&mut self) -> dynca::Result<RgbImage> {
        self.player.next_frame()
    }

    /// Parses and applies a text record, producing its single reply.
    pub fn handle_text(&mut self, text: &str) -> Reply {
        match parse_command(text) {
            Ok(cmd) => self.handle(&cmd),
            Err((name, e)) => Reply::error(name, self.step_index(), e),
        }
    }

    pub fn handle(&mut self, cmd: &Command) -> Reply {
        let step = self.step_index();
        match self.apply(cmd) {
            Ok(()) => Reply::ack(cmd.name(), step),
            Err(e) => Reply::error(Some(cmd.name().to_owned()), step, e),
        }
    }

    /// Applies a command; on error nothing has changed.
    pub fn apply(&mut self, cmd: &Command) -> Result<(), String> {
        let (h, w) = (self.player.state().height(), self.player.state().width());
        let ctrl = self.player.controls_mut();
        match cmd {
            Command::SetDirection { theta } => {
                if !theta.is_finite() {
                    return Err(format!("direction must be finite, got {theta}"));
                }
                ctrl.set_direction(*theta as f32);
                Ok(())
            }
            Command::SetSpeed { t } => ctrl.set_speed(*t).map_err(|e| e.to_string()),
            Command::Brush { x, y, radius } => ctrl
                .queue_brush(BrushStroke {
                    row: *y,
                    col: *x,
                    radius: *radius,
                })
                .map_err(|e| e.to_string()),
            Command::SetTransform { kind, map } => {
                let kind = match (kind, map) {
                    (TransformKind::None, None) => LocalTransform::None,
                    (TransformKind::CircularFromRight, None) => LocalTransform::CircularFromRight,
                    (TransformKind::Map, Some(m)) => {
                        if m.len() != h * w {
                            return Err(format!("angle map has {} entries, state is {h}x{w}", m.len()));
                        }
                        LocalTransform::Map(Grid::from_vec(h, w, 1, m.clone()).map_err(|e| e.to_string())?)
                    }
                    (TransformKind::Map, None) => return Err("transform kind map needs a map".into()),
                    (_, Some(_)) => return Err("only transform kind map takes a map".into()),
                };
                ctrl.set_local_transform(kind, h, w).map_err(|e| e.to_string())
            }
            Command::Resize { width, height } => self.player.resize(*height, *width).map_err(|e| e.to_string()),
            Command::LoadWeights { path } => {
                let (rule, cfg) = load_checkpoint(path).map_err(|e| e.to_string())?;
                self.player.load_rule(cfg, rule).map_err(|e| e.to_string())
            }
        }
    }
}
