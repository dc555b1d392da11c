use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use dragkit_core::engine::blob_scene;
use dragkit_core::geometry::{Pixel, PointPair, Vec2};
use dragkit_core::readout::train_default_head;

use crate::config::EngineConfig;
use crate::engine::Engine;
use crate::error::{AppError, Result};
use crate::formats::{self, ReportDocument};

#[derive(Debug, Parser)]
#[command(
    name = "dragkit",
    version,
    about = "Mask-free point-drag image editing"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Drag handle points to targets in one image.
    Edit(EditArgs),
    /// Run the local HTTP session API.
    Serve(ServeArgs),
    /// Train a readout head and save it as a head file.
    TrainReadout(TrainArgs),
    /// Write the synthetic blob scene and its drag as PNG and point files.
    BlobScene(BlobArgs),
}

#[derive(Debug, Args)]
pub struct EditArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub points: PathBuf,
    /// Engine config (TOML); falls back to $DRAGKIT_CONFIG.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; defaults to the config's `output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the displacement field and the warp-only image.
    #[arg(long)]
    pub debug: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:7860")]
    pub bind: SocketAddr,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Overrides `readout.training.steps`.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BlobArgs {
    /// Directory receiving `blob.png` and `blob_points.json`.
    #[arg(long)]
    pub out: PathBuf,
}

/// The 64x64 benchmark scene: a red blob at (24, 32) on blue.
pub fn benchmark_scene() -> (dragkit_core::engine::RgbImage, Vec<PointPair>) {
    let image = blob_scene(
        64,
        64,
        Vec2::new(24.0, 32.0),
        8.0,
        [0.9, 0.2, 0.1],
        [0.1, 0.3, 0.6],
    );
    let pairs = vec![PointPair::new(Pixel::new(24, 32), Pixel::new(40, 32))];
    (image, pairs)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Edit(args) => edit(&args).map(|_| ()),
        Command::Serve(args) => serve(&args),
        Command::TrainReadout(args) => train(&args),
        Command::BlobScene(args) => blob(&args),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))
}

/// Runs one edit and returns the output directory.
pub fn edit(args: &EditArgs) -> Result<PathBuf> {
    let config = EngineConfig::resolve(args.config.as_deref())?;
    let image = formats::read_png(&args.image)?;
    let pairs = formats::read_points(&args.points)?;
    let engine = Engine::new(config)?;
    formats::validate_pairs(&pairs, image.width(), image.height()).map_err(|issues| {
        AppError::Points {
            path: Some(args.points.clone()),
            issues,
        }
    })?;
    engine
        .check_image(image.width(), image.height())
        .map_err(|message| AppError::Image {
            path: args.image.clone(),
            message,
        })?;

    let output = engine.edit(&image, &pairs, args.seed, &mut |_| {})?;

    let out = args
        .out
        .clone()
        .unwrap_or_else(|| engine.config().output_dir.clone());
    create_dir(&out)?;
    formats::write_file(&out.join("edited.png"), &formats::encode_png(&output.image))?;
    formats::write_file(
        &out.join("mask.png"),
        &formats::encode_mask_png(&output.mask),
    )?;
    let doc = ReportDocument::new(args.seed, &image, &pairs, output.report);
    formats::write_file(&out.join("report.json"), doc.to_json().as_bytes())?;

    if args.debug || engine.config().debug {
        let factor = engine.backend().latent_factor;
        formats::write_file(
            &out.join("displacement.png"),
            &formats::encode_displacement_png(&output.displacement, factor),
        )?;
        formats::write_file(
            &out.join("displacement.dkdf"),
            &formats::encode_displacement(&output.displacement),
        )?;
        let warp_only = engine.render(&output.warped_latent)?;
        formats::write_file(&out.join("warp_only.png"), &formats::encode_png(&warp_only))?;
    }
    Ok(out)
}

fn serve(args: &ServeArgs) -> Result<()> {
    let config = EngineConfig::resolve(args.config.as_deref())?;
    let engine = Engine::new(config)?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| AppError::io("tokio runtime", e))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(args.bind)
            .await
            .map_err(|e| AppError::io(args.bind.to_string(), e))?;
        let addr = listener
            .local_addr()
            .map_err(|e| AppError::io(args.bind.to_string(), e))?;
        eprintln!("dragkit listening on http://{addr}");
        crate::service::serve(listener, engine, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| AppError::io(addr.to_string(), e))
    })
}

fn train(args: &TrainArgs) -> Result<()> {
    let mut config = EngineConfig::resolve(args.config.as_deref())?;
    if let Some(steps) = args.steps {
        config.readout.training.steps = steps;
    }
    let backend = config.backend()?;
    let outcome = train_default_head(&backend.denoiser, &config.readout.training, args.seed)?;
    formats::write_file(&args.out, formats::head_to_json(&outcome.head).as_bytes())?;
    eprintln!(
        "mean triplet loss {:.6} -> {:.6} over {} steps{}",
        outcome.initial_loss(),
        outcome.final_loss(),
        outcome.losses.len().saturating_sub(1),
        if outcome.stalled { " (stalled)" } else { "" }
    );
    Ok(())
}

fn blob(args: &BlobArgs) -> Result<()> {
    create_dir(&args.out)?;
    let (image, pairs) = benchmark_scene();
    formats::write_file(&args.out.join("blob.png"), &formats::encode_png(&image))?;
    formats::write_file(
        &args.out.join("blob_points.json"),
        formats::points_to_json(&pairs).as_bytes(),
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn edit_flags_parse() {
        let cli = Cli::try_parse_from([
            "dragkit", "edit", "--image", "a.png", "--points", "p.json", "--seed", "7", "--debug",
        ])
        .unwrap();
        let Command::Edit(args) = cli.command else {
            panic!("expected edit");
        };
        assert_eq!(args.seed, 7);
        assert!(args.debug);
        assert_eq!(args.out, None);
    }

    #[test]
    fn benchmark_scene_shape() {
        let (image, pairs) = benchmark_scene();
        assert_eq!((image.width(), image.height()), (64, 64));
        assert_eq!(pairs.len(), 1);
        assert!(image.get(0, 24, 32) > image.get(0, 40, 32));
    }
}
