//! Edge client and server front ends over `cjade-core`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use cjade_core::bench::{self, BenchConfig, NetworkProfile};
use cjade_core::cascade::{
    classify_cascaded_with, CallContext, CascadeError, CascadePolicy, ClassificationResult,
    EdgeModel, EdgeTiming, Fallback, FusionRule, OfflineTransport, PayloadKindName, Provenance,
    TcpTransport, Transport,
};
use cjade_core::dataset::export::{read_ppm, write_ppm};
use cjade_core::dataset::{build_dataset, Condition, DatasetManifest, SampleRecord, Split};
use cjade_core::models::load_weights;
use serde::Serialize;

/// Exit status 1.
pub const EXIT_INPUT: i32 = 1;
/// Exit status 2: the server could not be used and the policy forbids falling back.
pub const EXIT_UNREACHABLE: i32 = 2;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.to_string(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<CascadeError> for CliError {
    fn from(e: CascadeError) -> Self {
        let code = match e {
            CascadeError::Transport { .. } => EXIT_UNREACHABLE,
            _ => EXIT_INPUT,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

/// `image`, `roi` or `features`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PayloadArg(pub PayloadKindName);

impl FromStr for PayloadArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "image" | "full" | "full-image" => Ok(Self(PayloadKindName::FullImage)),
            "roi" => Ok(Self(PayloadKindName::Roi)),
            "features" => Ok(Self(PayloadKindName::Features)),
            _ => Err(format!(
                "unknown payload {s:?}; expected image, roi or features"
            )),
        }
    }
}

/// `cloud-wins` or `weighted:α`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionArg(pub FusionRule);

impl FromStr for FusionArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "cloud-wins" {
            return Ok(Self(FusionRule::CloudWins));
        }
        let alpha = s.strip_prefix("weighted:").ok_or_else(|| {
            format!("unknown fusion {s:?}; expected cloud-wins or weighted:ALPHA")
        })?;
        let a: f64 = alpha
            .parse()
            .map_err(|_| format!("bad fusion weight {alpha:?}"))?;
        if !(0.0..=1.0).contains(&a) {
            return Err(format!("fusion weight {a} outside [0, 1]"));
        }
        Ok(Self(FusionRule::WeightedAverage(a)))
    }
}

/// `edge` or `error`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FallbackArg(pub Fallback);

impl FromStr for FallbackArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "edge" => Ok(Self(Fallback::EdgeResultFlagged)),
            "error" => Ok(Self(Fallback::Error)),
            _ => Err(format!("unknown fallback {s:?}; expected edge or error")),
        }
    }
}

/// `split:index`, e.g. `test:12`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleRef {
    pub split: Split,
    pub index: usize,
}

impl FromStr for SampleRef {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let (split, index) = s
            .split_once(':')
            .ok_or_else(|| format!("sample {s:?} is not split:index"))?;
        Ok(Self {
            split: Split::parse(split).ok_or_else(|| format!("unknown split {split:?}"))?,
            index: index
                .parse()
                .map_err(|_| format!("bad sample index {index:?}"))?,
        })
    }
}

#[derive(Debug, Clone, clap::Args)]
pub struct ClientArgs {
    /// Lightweight model weights.
    #[arg(long, env = "CJADE_EDGE_WEIGHTS")]
    pub edge_weights: PathBuf,
    #[arg(long, env = "CJADE_SERVER", default_value = "127.0.0.1:7878")]
    pub server: String,
    /// Escalate when the edge confidence is below this.
    #[arg(long, default_value_t = cjade_core::cascade::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, default_value = "image")]
    pub payload: PayloadArg,
    #[arg(long, default_value = "cloud-wins")]
    pub fusion: FusionArg,
    #[arg(long, default_value = "edge")]
    pub fallback: FallbackArg,
    #[arg(long, default_value_t = cjade_core::cascade::DEFAULT_TIMEOUT_MS)]
    pub timeout_ms: u64,
    /// Crop margin around the salient box, as a fraction of the image side.
    #[arg(long, default_value_t = cjade_core::cascade::DEFAULT_ROI_MARGIN)]
    pub roi_margin: f64,
    /// Never contact the server.
    #[arg(long)]
    pub offline: bool,
}

impl ClientArgs {
    pub fn policy(&self) -> Result<CascadePolicy, CliError> {
        let p = CascadePolicy {
            threshold: self.threshold,
            payload: self.payload.0,
            roi_margin: self.roi_margin,
            fusion: self.fusion.0,
            fallback: self.fallback.0,
            timeout_ms: self.timeout_ms,
        };
        p.validate().map_err(CliError::input)?;
        Ok(p)
    }

    pub fn edge(&self) -> Result<EdgeModel, CliError> {
        let art = load_weights(&self.edge_weights)
            .map_err(|e| CliError::input(format!("{}: {e}", self.edge_weights.display())))?;
        EdgeModel::new(art).map_err(CliError::input)
    }

    pub fn transport(&self) -> Box<dyn Transport + Send> {
        if self.offline {
            Box::new(OfflineTransport)
        } else {
            let connect = Duration::from_millis(self.timeout_ms);
            Box::new(TcpTransport::lazy(self.server.clone(), connect))
        }
    }
}

pub fn load_manifest(path: Option<&Path>) -> Result<DatasetManifest, CliError> {
    match path {
        Some(p) => {
            DatasetManifest::load(p).map_err(|e| CliError::input(format!("{}: {e}", p.display())))
        }
        None => Ok(DatasetManifest::default()),
    }
}

pub fn load_split(manifest: &DatasetManifest, split: Split) -> Result<Vec<SampleRecord>, CliError> {
    let data = build_dataset(manifest).map_err(CliError::input)?;
    Ok(match split {
        Split::Train => data.train,
        Split::Val => data.val,
        Split::Test => data.test,
    })
}

pub enum ImageSource {
    File(PathBuf),
    Sample {
        manifest: Option<PathBuf>,
        sample: SampleRef,
    },
}

/// The image plus its ground truth when it came from the dataset.
pub fn load_image(
    source: &ImageSource,
) -> Result<(cjade_core::Tensor, Option<(usize, Condition)>), CliError> {
    match source {
        ImageSource::File(p) => {
            let img = read_ppm(p).map_err(|e| CliError::input(format!("{}: {e}", p.display())))?;
            Ok((img, None))
        }
        ImageSource::Sample { manifest, sample } => {
            let m = load_manifest(manifest.as_deref())?;
            let split = load_split(&m, sample.split)?;
            let s = split.into_iter().nth(sample.index).ok_or_else(|| {
                CliError::input(format!("sample index {} out of range", sample.index))
            })?;
            Ok((s.image, Some((s.label, s.condition))))
        }
    }
}

/// Same as the library call with identical inputs and policy.
pub fn classify(
    args: &ClientArgs,
    image: &cjade_core::Tensor,
) -> Result<ClassificationResult, CliError> {
    let policy = args.policy()?;
    let edge = args.edge()?;
    let mut transport = args.transport();
    Ok(classify_cascaded_with(
        image,
        &policy,
        &edge,
        transport.as_mut(),
        &CallContext::default(),
    )?)
}

pub fn render_result(r: &ClassificationResult) -> String {
    let t = &r.timing;
    let mut s = format!(
        "label {}  confidence {:.4}  provenance {}\n\
         timing ms: edge {:.3}  network {:.3}  cloud {:.3}  total {:.3}\n\
         bytes sent {}  received {}\n",
        r.label,
        r.confidence,
        provenance_name(r.provenance),
        t.edge_ms,
        t.network_ms,
        t.cloud_ms,
        t.total_ms,
        r.bytes_sent,
        r.bytes_received
    );
    if let Some(roi) = r.roi {
        s.push_str(&format!(
            "roi x {} y {} w {} h {}\n",
            roi[0], roi[1], roi[2], roi[3]
        ));
    }
    if let Some(why) = &r.fallback_reason {
        s.push_str(&format!("fallback: {why}\n"));
    }
    s
}

pub fn provenance_name(p: Provenance) -> &'static str {
    match p {
        Provenance::Edge => "edge",
        Provenance::Cloud => "cloud",
        Provenance::Fused => "fused",
        Provenance::FallbackEdge => "fallback-edge",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchSummary {
    pub samples: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub escalation_rate: f64,
    pub fallbacks: usize,
    pub errors: usize,
}

#[derive(Debug, Clone)]
pub struct BatchOptions {
    pub parallel: usize,
    /// Keep wall-clock timing in each line; makes output run-dependent.
    pub timings: bool,
}

fn batch_line(
    index: usize,
    sample: &SampleRecord,
    outcome: &Result<ClassificationResult, CliError>,
    timings: bool,
) -> serde_json::Value {
    let mut line = serde_json::json!({
        "index": index,
        "label": sample.label,
        "condition": sample.condition,
    });
    match outcome {
        Ok(r) => {
            let mut v = serde_json::to_value(r).expect("result serializes");
            if !timings {
                v.as_object_mut().expect("object").remove("timing");
            }
            line["correct"] = (r.label == sample.label).into();
            line["result"] = v;
        }
        Err(e) => {
            line["correct"] = false.into();
            line["error"] = e.message.clone().into();
        }
    }
    line
}

/// Classifies every sample; lines come back in sample order whatever
/// `parallel` is. Each worker holds its own connection.
pub fn run_batch(
    args: &ClientArgs,
    samples: &[SampleRecord],
    options: &BatchOptions,
) -> Result<(Vec<String>, BatchSummary), CliError> {
    let policy = args.policy()?;
    let edge = args.edge()?;
    let workers = options.parallel.clamp(1, samples.len().max(1));
    let mut outcomes: Vec<Option<Result<ClassificationResult, CliError>>> =
        (0..samples.len()).map(|_| None).collect();

    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let (edge, policy) = (&edge, &policy);
                let mut transport = args.transport();
                scope.spawn(move || {
                    let mut out = Vec::new();
                    for i in (w..samples.len()).step_by(workers) {
                        let ctx = CallContext {
                            request_id: i as u64 + 1,
                            edge_timing: EdgeTiming::WallClock,
                        };
                        let r = classify_cascaded_with(
                            &samples[i].image,
                            policy,
                            edge,
                            transport.as_mut(),
                            &ctx,
                        )
                        .map_err(CliError::from);
                        out.push((i, r));
                    }
                    out
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("batch worker") {
                outcomes[i] = Some(r);
            }
        }
    });

    let mut lines = Vec::with_capacity(samples.len());
    let (mut correct, mut escalated, mut fallbacks, mut errors) = (0, 0, 0, 0);
    for (i, (s, o)) in samples.iter().zip(&outcomes).enumerate() {
        let o = o.as_ref().expect("every sample classified");
        match o {
            Ok(r) => {
                correct += usize::from(r.label == s.label);
                escalated += usize::from(r.provenance != Provenance::Edge);
                fallbacks += usize::from(r.provenance == Provenance::FallbackEdge);
            }
            Err(_) => {
                errors += 1;
                escalated += 1;
            }
        }
        lines.push(batch_line(i, s, o, options.timings).to_string());
    }
    let n = samples.len();
    let frac = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    let summary = BatchSummary {
        samples: n,
        correct,
        accuracy: 100.0 * frac(correct),
        escalation_rate: frac(escalated),
        fallbacks,
        errors,
    };
    Ok((lines, summary))
}

pub fn summary_line(summary: &BatchSummary) -> String {
    serde_json::json!({ "summary": summary }).to_string()
}

/// Result lines then the summary line.
pub fn write_batch(path: &Path, lines: &[String], summary: &BatchSummary) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::input(format!("{}: {e}", path.display()));
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    for l in lines {
        writeln!(w, "{l}").map_err(io)?;
    }
    writeln!(w, "{}", summary_line(summary)).map_err(io)?;
    w.flush().map_err(io)
}

#[derive(Debug, Clone, clap::Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// default, ideal, lossy or offline.
    #[arg(long, default_value = "default")]
    pub profile: String,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value = "bench-out")]
    pub out: PathBuf,
    /// Reuse trained models stored here.
    #[arg(long)]
    pub cache: Option<PathBuf>,
}

pub fn bench_config(args: &BenchArgs) -> Result<BenchConfig, CliError> {
    let manifest = load_manifest(args.manifest.as_deref())?;
    let mut c = BenchConfig::new(manifest, args.seed);
    c.profile = NetworkProfile::named(&args.profile)
        .ok_or_else(|| CliError::input(format!("unknown network profile {:?}", args.profile)))?;
    c.validate().map_err(CliError::input)?;
    Ok(c)
}

/// Runs the pipeline, writes every output file and returns the text report.
pub fn run_bench(args: &BenchArgs) -> Result<String, CliError> {
    let config = bench_config(args)?;
    let run = bench::run_benchmark(&config, args.cache.as_deref()).map_err(CliError::input)?;
    bench::write_outputs(&run, &args.out).map_err(CliError::input)?;
    Ok(bench::render_text(&run.report, Some(&run.measured)))
}

/// Writes `limit` samples of a split as PPM files named
/// `<index>_<label>_<condition>.ppm`.
pub fn export_split(
    manifest: &DatasetManifest,
    split: Split,
    out: &Path,
    limit: Option<usize>,
) -> Result<usize, CliError> {
    let samples = load_split(manifest, split)?;
    std::fs::create_dir_all(out).map_err(|e| CliError::input(format!("{}: {e}", out.display())))?;
    let n = limit.unwrap_or(samples.len()).min(samples.len());
    for (i, s) in samples.iter().take(n).enumerate() {
        let name = format!("{i:05}_{}_{}.ppm", s.label, s.condition.name());
        write_ppm(&s.image, out.join(name)).map_err(CliError::input)?;
    }
    Ok(n)
}
