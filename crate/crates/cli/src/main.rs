use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use tilscope_core::cohort::{self, PatchParams, PatchSpec, QuantRow};
use tilscope_core::helm::{helm_detect, Detection, HelmParams};
use tilscope_core::metrics::io::{eval_dirs, ClassConfig, EvalOptions};
use tilscope_core::metrics::{Dice2Mode, ReplicationAlphas};
use tilscope_core::pyramid::{build_pyramid, load_source, TileFormat, DEFAULT_OVERLAP, DEFAULT_TILE_SIZE};
use tilscope_core::stain::{self, AugmentParams, ChannelImage, StainMatrix};
use tilscope_core::survival::{self, Cutoff, DEFAULT_MIN_GROUP_FRACTION};
use tilscope_core::{Interval, RasterImage};
use tilscope_service::overlay::contours_to_overlay;
use tilscope_service::ServiceConfig;

#[derive(Parser)]
#[command(name = "tilscope", version, about = "TIL quantification, evaluation and slide serving")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Colour deconvolution and stain augmentation.
    #[command(subcommand)]
    Stain(StainCmd),
    /// Rule-based nucleus detection.
    #[command(subcommand)]
    Helm(HelmCmd),
    /// Instance segmentation and classification metrics.
    #[command(subcommand)]
    Metrics(MetricsCmd),
    /// Kaplan-Meier, log-rank and hazard-ratio analyses.
    #[command(subcommand)]
    Survival(SurvivalCmd),
    /// Patch extraction and per-patient quantification.
    #[command(subcommand)]
    Cohort(CohortCmd),
    /// DeepZoom pyramid export.
    #[command(subcommand)]
    Pyramid(PyramidCmd),
    /// Run the tile and annotation HTTP service.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Args)]
struct MatrixArg {
    /// JSON 3×3 stain matrix (rows H, E, D); defaults to the H&E matrix.
    #[arg(long)]
    matrix: Option<PathBuf>,
}

impl MatrixArg {
    fn load(&self) -> Result<StainMatrix> {
        match &self.matrix {
            None => Ok(stain::default_he_matrix()),
            Some(p) => {
                let rows: [[f64; 3]; 3] = read_json(p)?;
                Ok(StainMatrix::from_rows(rows)?)
            }
        }
    }
}

#[derive(Subcommand)]
enum StainCmd {
    /// Writes single-stain renderings of the hematoxylin and eosin channels.
    Deconvolve {
        input: PathBuf,
        #[arg(long)]
        out_h: PathBuf,
        #[arg(long)]
        out_e: PathBuf,
        #[arg(long)]
        out_d: Option<PathBuf>,
        #[command(flatten)]
        matrix: MatrixArg,
    },
    /// Linear HED augmentation `c' = alpha*c + beta` per stain channel.
    Augment {
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// `lo,hi` for every channel.
        #[arg(long, value_parser = parse_interval, default_value = "1,1", allow_hyphen_values = true)]
        alpha: Interval,
        #[arg(long, value_parser = parse_interval, default_value = "0,0", allow_hyphen_values = true)]
        beta: Interval,
        #[arg(short, long)]
        out: PathBuf,
        #[command(flatten)]
        matrix: MatrixArg,
    },
}

#[derive(Subcommand)]
enum HelmCmd {
    Detect {
        patch: PathBuf,
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Draws detection contours over the patch.
    Overlay {
        patch: PathBuf,
        detections: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum MetricsCmd {
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        classes: PathBuf,
        #[arg(long, default_value_t = tilscope_core::metrics::DEFAULT_IOU_THRESHOLD)]
        iou_threshold: f64,
        /// `ratio-of-sums` or `mean-per-nucleus`.
        #[arg(long, default_value = "ratio-of-sums")]
        dice2: String,
        /// Replication weights `fp_dcr,fn_dcr,fp_d,fn_d`.
        #[arg(long, default_value = "2,2,1,1")]
        alphas: String,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct CohortInput {
    #[arg(long)]
    cohort: PathBuf,
}

#[derive(Subcommand)]
enum SurvivalCmd {
    Analyze {
        #[command(flatten)]
        input: CohortInput,
        #[arg(long)]
        score_col: String,
        /// `median` or a numeric cut-off.
        #[arg(long, default_value = "median")]
        cutoff: Cutoff,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Log-rank p-value at every candidate cut-off.
    Sweep {
        #[command(flatten)]
        input: CohortInput,
        #[arg(long)]
        score_col: String,
        #[arg(long, default_value_t = DEFAULT_MIN_GROUP_FRACTION)]
        min_group_fraction: f64,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Pearson correlation between two score columns.
    Correlate {
        #[command(flatten)]
        input: CohortInput,
        #[arg(long)]
        x: String,
        #[arg(long)]
        y: String,
    },
}

#[derive(Subcommand)]
enum CohortCmd {
    /// Cuts tissue patches from a slide and writes them with a manifest.
    Extract {
        #[arg(long)]
        slide: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the slide file stem.
        #[arg(long)]
        slide_id: Option<String>,
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Counts inflammatory nuclei per patch.
    Quantify {
        #[arg(long)]
        patches: PathBuf,
        #[arg(long, default_value = "helm")]
        detector: String,
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Joins per-patient medians with clinical data into a cohort table.
    Export {
        #[arg(long)]
        quants: PathBuf,
        #[arg(long)]
        clinical: PathBuf,
        #[arg(long, default_value = "til_median")]
        column: String,
        #[arg(short, long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum PyramidCmd {
    Build {
        slide: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Defaults to the slide file stem.
        #[arg(long)]
        name: Option<String>,
        #[arg(long, default_value_t = DEFAULT_TILE_SIZE)]
        tile_size: u32,
        #[arg(long, default_value_t = DEFAULT_OVERLAP)]
        overlap: u32,
        #[arg(long, default_value = "jpeg")]
        format: TileFormat,
    },
}

fn parse_interval(s: &str) -> Result<Interval, String> {
    let (lo, hi) = s.split_once(',').ok_or_else(|| format!("expected lo,hi, got {s:?}"))?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("{lo:?}: {e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("{hi:?}: {e}"))?;
    Ok(Interval::new(lo, hi))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(BufReader::new(f)).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn load_image(path: &Path) -> Result<RasterImage> {
    RasterImage::load(path).with_context(|| format!("loading {}", path.display()))
}

fn save_image(img: &RasterImage, path: &Path) -> Result<()> {
    img.save(path).with_context(|| format!("writing {}", path.display()))
}

fn stem(path: &Path) -> Result<String> {
    Ok(path
        .file_stem()
        .with_context(|| format!("{} has no file name", path.display()))?
        .to_string_lossy()
        .into_owned())
}

/// RGB rendering of one stain channel with the others zeroed.
fn single_stain(hed: &ChannelImage, channel: usize, m: &StainMatrix) -> RasterImage {
    let values = hed
        .values()
        .iter()
        .map(|v| {
            let mut c = [0.0; 3];
            c[channel] = v[channel];
            c
        })
        .collect();
    let only = ChannelImage::from_values(hed.width(), hed.height(), values).expect("same dimensions");
    stain::hed_to_rgb(&only, m)
}

fn run_stain(cmd: StainCmd) -> Result<()> {
    match cmd {
        StainCmd::Deconvolve {
            input,
            out_h,
            out_e,
            out_d,
            matrix,
        } => {
            let m = matrix.load()?;
            let hed = stain::rgb_to_hed(&load_image(&input)?, &m)?;
            save_image(&single_stain(&hed, 0, &m), &out_h)?;
            save_image(&single_stain(&hed, 1, &m), &out_e)?;
            if let Some(d) = out_d {
                save_image(&single_stain(&hed, 2, &m), &d)?;
            }
        }
        StainCmd::Augment {
            input,
            seed,
            alpha,
            beta,
            out,
            matrix,
        } => {
            let p = AugmentParams::uniform(alpha, beta, seed)?.with_matrix(matrix.load()?);
            save_image(&stain::hed_linear_augment(&load_image(&input)?, &p), &out)?;
        }
    }
    Ok(())
}

fn helm_params(path: Option<&Path>) -> Result<HelmParams> {
    let p: HelmParams = match path {
        Some(p) => read_json(p)?,
        None => HelmParams::default(),
    };
    p.validate()?;
    Ok(p)
}

fn run_helm(cmd: HelmCmd) -> Result<()> {
    match cmd {
        HelmCmd::Detect { patch, params, out } => {
            let p = helm_params(params.as_deref())?;
            let dets = helm_detect(&load_image(&patch)?, &p)?;
            write_json(&dets, Some(&out))?;
            eprintln!("{} detections", dets.len());
        }
        HelmCmd::Overlay { patch, detections, out } => {
            let mut img = load_image(&patch)?;
            let dets: Vec<Detection> = read_json(&detections)?;
            let overlay = contours_to_overlay(&dets, [0, 0], 1, img.width(), img.height());
            for (x, y, px) in overlay.enumerate_pixels() {
                if px.0[3] > 0 {
                    img.put(x, y, [px.0[0], px.0[1], px.0[2]]);
                }
            }
            save_image(&img, &out)?;
        }
    }
    Ok(())
}

fn run_metrics(cmd: MetricsCmd) -> Result<()> {
    let MetricsCmd::Eval {
        gt,
        pred,
        classes,
        iou_threshold,
        dice2,
        alphas,
        out,
    } = cmd;
    let dice2_mode = match dice2.as_str() {
        "ratio-of-sums" => Dice2Mode::RatioOfSums,
        "mean-per-nucleus" => Dice2Mode::MeanPerNucleus,
        other => bail!("unknown --dice2 mode {other:?}"),
    };
    let a: Vec<f64> = alphas
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .context("--alphas")?;
    let [fp_dcr, fn_dcr, fp_d, fn_d] = a[..] else {
        bail!("--alphas needs four comma-separated weights");
    };
    let opts = EvalOptions {
        iou_threshold,
        dice2_mode,
        alphas: ReplicationAlphas {
            fp_dcr,
            fn_dcr,
            fp_d,
            fn_d,
        },
    };
    let config = ClassConfig::load(&classes)?;
    let report = eval_dirs(&gt, &pred, &config, &opts)?;
    write_json(&report, out.as_deref())
}

fn load_cohort(input: &CohortInput) -> Result<Vec<cohort::CohortRow>> {
    let f = File::open(&input.cohort).with_context(|| format!("opening {}", input.cohort.display()))?;
    Ok(cohort::read_cohort(BufReader::new(f))?)
}

fn run_survival(cmd: SurvivalCmd) -> Result<()> {
    match cmd {
        SurvivalCmd::Analyze {
            input,
            score_col,
            cutoff,
            out,
        } => {
            let recs = cohort::survival_records(&load_cohort(&input)?, &score_col)?;
            let a = survival::analyze(&recs, cutoff)?;
            for g in &a.groups {
                eprintln!(
                    "{:>4}: n={} ({:.0}%) events={} 5y={:.2} median={}",
                    g.group.to_string(),
                    g.n,
                    g.percent,
                    g.events,
                    g.five_year,
                    g.median_months.map_or("NA".into(), |m| format!("{m:.1}"))
                );
            }
            match &a.hazard {
                Some(h) => eprintln!("HR {:.2} ({:.2}-{:.2}), log-rank p {}", h.hr, h.ci_low, h.ci_high, a.p_formatted),
                None => eprintln!("HR not estimable: {}", a.hazard_note.as_deref().unwrap_or("")),
            }
            write_json(&a, out.as_deref())?;
        }
        SurvivalCmd::Sweep {
            input,
            score_col,
            min_group_fraction,
            out,
        } => {
            let recs = cohort::survival_records(&load_cohort(&input)?, &score_col)?;
            write_json(&survival::cutoff_sweep(&recs, min_group_fraction)?, out.as_deref())?;
        }
        SurvivalCmd::Correlate { input, x, y } => {
            let rows = load_cohort(&input)?;
            let (mut xs, mut ys) = (Vec::new(), Vec::new());
            for r in &rows {
                // patients missing either score are left out
                if let (Some(a), Some(b)) = (r.scores.get(&x), r.scores.get(&y)) {
                    xs.push(*a);
                    ys.push(*b);
                }
            }
            let r = survival::pearson_r(&xs, &ys)?;
            println!("{}", serde_json::json!({"x": x, "y": y, "n": xs.len(), "pearson_r": r}));
        }
    }
    Ok(())
}

const MANIFEST: &str = "manifest.json";

fn run_cohort(cmd: CohortCmd) -> Result<()> {
    match cmd {
        CohortCmd::Extract {
            slide,
            out,
            slide_id,
            params,
        } => {
            let p: PatchParams = match params {
                Some(path) => read_json(&path)?,
                None => PatchParams::default(),
            };
            let id = match slide_id {
                Some(id) => id,
                None => stem(&slide)?,
            };
            let img = load_source(&slide)?;
            let specs = cohort::extract_patches(&img, &id, &p)?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            specs.par_iter().try_for_each(|s| -> Result<()> {
                let patch = img.crop(s.origin[0], s.origin[1], s.side, s.side)?;
                save_image(&patch, &out.join(s.file_name()))
            })?;
            // merge with patches already extracted from other slides
            let manifest = out.join(MANIFEST);
            let mut all: Vec<PatchSpec> = if manifest.exists() { read_json(&manifest)? } else { Vec::new() };
            all.retain(|s| s.slide_id != id);
            all.extend(specs.iter().cloned());
            write_json(&all, Some(&manifest))?;
            eprintln!("{} patches from {id}", specs.len());
        }
        CohortCmd::Quantify {
            patches,
            detector,
            params,
            out,
        } => {
            if detector != "helm" {
                bail!("unknown detector {detector:?}; batch quantification supports \"helm\"");
            }
            let p = helm_params(params.as_deref())?;
            let specs: Vec<PatchSpec> = read_json(&patches.join(MANIFEST))?;
            let mut rows: Vec<QuantRow> = specs
                .par_iter()
                .map(|s| -> Result<QuantRow> {
                    let img = load_image(&patches.join(s.file_name()))?;
                    let dets = helm_detect(&img, &p)?;
                    Ok(QuantRow {
                        patient_id: s.slide_id.clone(),
                        patch_id: s.file_name().trim_end_matches(".png").to_string(),
                        inflammatory_count: cohort::count_inflammatory(&dets),
                    })
                })
                .collect::<Result<_>>()?;
            rows.sort_by(|a, b| (&a.patient_id, &a.patch_id).cmp(&(&b.patient_id, &b.patch_id)));
            let f = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            cohort::write_quants(&rows, BufWriter::new(f))?;
        }
        CohortCmd::Export {
            quants,
            clinical,
            column,
            out,
        } => {
            let q = cohort::read_quants(BufReader::new(
                File::open(&quants).with_context(|| format!("opening {}", quants.display()))?,
            ))?;
            let c = cohort::read_clinical(BufReader::new(
                File::open(&clinical).with_context(|| format!("opening {}", clinical.display()))?,
            ))?;
            let scores: BTreeMap<_, _> = cohort::score_table(&cohort::quants_by_patient(&q), &column);
            let rows = cohort::export_cohort(&scores, &c)?;
            let mut w = BufWriter::new(File::create(&out).with_context(|| format!("creating {}", out.display()))?);
            cohort::write_cohort(&rows, &mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn run_pyramid(cmd: PyramidCmd) -> Result<()> {
    let PyramidCmd::Build {
        slide,
        out,
        name,
        tile_size,
        overlap,
        format,
    } = cmd;
    let name = match name {
        Some(n) => n,
        None => stem(&slide)?,
    };
    let src = load_source(&slide)?;
    let d = build_pyramid(src, tile_size, overlap, format, &out, &name)?;
    eprintln!("{name}: {}x{}, {} levels", d.width, d.height, d.level_count());
    Ok(())
}

fn run_serve(config: Option<PathBuf>) -> Result<()> {
    let cfg = match config {
        Some(p) => ServiceConfig::load(&p)?,
        None => ServiceConfig::default(),
    }
    .from_env()?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(tilscope_service::serve(cfg, None))?;
    Ok(())
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Stain(c) => run_stain(c),
        Command::Helm(c) => run_helm(c),
        Command::Metrics(c) => run_metrics(c),
        Command::Survival(c) => run_survival(c),
        Command::Cohort(c) => run_cohort(c),
        Command::Pyramid(c) => run_pyramid(c),
        Command::Serve { config } => run_serve(config),
    }
}
