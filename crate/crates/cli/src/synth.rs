use std::fs;
use std::net::TcpListener;
use std::path::Path;

use dynca::checkpoint::load_checkpoint;
use dynca::imaging::save_png;
use dynca::Player;

use crate::cli::{CliError, SynthArgs};
use crate::server::{serve, ServeOptions};

fn player(a: &SynthArgs) -> Result<Player, CliError> {
    let (rule, cfg) = load_checkpoint(&a.weights)?;
    let (h, w) = a.size.unwrap_or((cfg.seed_h, cfg.seed_w));
    let mut p = Player::new(cfg, rule, h, w, a.seed).map_err(|e| CliError::usage(e.to_string()))?;
    if let Some(t) = a.t {
        p.controls_mut().set_speed(t).map_err(|e| CliError::usage(e.to_string()))?;
    }
    Ok(p)
}

/// Writes `n` frames, one every `T` steps, as `frame_00000.png` onwards.
pub fn write_frames(player: &mut Player, n: usize, dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    for i in 0..n {
        let img = player.next_frame()?;
        save_png(&img, &dir.join(format!("frame_{i:05}.png")))?;
    }
    Ok(())
}

pub fn run(a: &SynthArgs) -> Result<(), CliError> {
    let mut p = player(a)?;
    if let Some(addr) = &a.serve {
        let listener = TcpListener::bind(addr)?;
        eprintln!("streaming on ws://{}", listener.local_addr()?);
        let opts = ServeOptions {
            max_fps: a.max_fps,
            max_connections: None,
        };
        serve(listener, p, &opts)?;
        return Ok(());
    }
    let dir = a.out.as_deref().ok_or_else(|| CliError::usage("--out or --serve is required"))?;
    write_frames(&mut p, a.frames, dir)?;
    eprintln!("wrote {} frames to {}", a.frames, dir.display());
    Ok(())
}
