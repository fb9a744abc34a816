use std::fs;

use dynca::fields::{colorize_flow, field_to_raw_f32, generate_field, FieldKind};
use dynca::imaging::save_png;

use crate::cli::{CliError, ExportArgs};

pub fn run(a: &ExportArgs) -> Result<(), CliError> {
    let kind: FieldKind = a.field.parse().map_err(|e: dynca::Error| CliError::usage(e.to_string()))?;
    let (h, w) = a.size;
    let field = generate_field::<f32>(kind, h, w).map_err(|e| CliError::usage(e.to_string()))?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let png = a.out.with_extension("png");
    let raw = a.out.with_extension("f32");
    save_png(&colorize_flow(&field), &png)?;
    fs::write(&raw, field_to_raw_f32(&field))?;
    eprintln!("wrote {} and {}", png.display(), raw.display());
    Ok(())
}
