//! The `bsif` command line: synthetic data, patch extraction, training,
//! encoding, comparison and evaluation. JSON goes to stdout, logs to
//! stderr; every report embeds the configuration that produced it.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{encode, encode_any};
use crate::error::{Error, Result};
use crate::evalkit::{
    boxplot_summary, bootstrap_dprime, compare_methods, grid_search, make_pairs, metrics, roc_points, score_bank,
    AnovaResult, BoxplotSummary, GridCell, Metrics, RocPoint, DEFAULT_PERMUTATIONS, IMPOSTOR_SCHEME,
};
use crate::filtertrain::{random_orthonormal_bank, standard_grid, train_filters, train_grid, Nonlinearity, TrainingConfig, TrainingReport};
use crate::imgio::{
    load_filter_bank, load_manifest, load_template, read_pnm, save_filter_bank, save_template, DatasetManifest,
    FilterBank, NormalizedIris,
};
use crate::matcher::{score_all, ShiftRange, Strategy, DEFAULT_MAX_SHIFT};
use crate::patches::{
    build_corpus, load_patch_set, normalize_region, save_patch_set, Circle, CircleParams, CorpusReport, RegionEntry,
    RegionMask, SourceTag, DEFAULT_PER_REGION_COUNT, STANDARD_SIZES,
};
use crate::synth::{generate, write_dataset, SynthConfig};

const STRATEGY_CHOICES: [&str; 6] = ["hist-raw", "hist-norm", "hd-mean", "hd-min", "hd-max", "all"];

#[derive(Parser, Debug)]
#[command(name = "bsif", version, about = "Domain-specific BSIF filters for iris recognition")]
pub struct Cli {
    /// Worker threads (default: one per core).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic normalized-iris dataset with manifest and regions.
    Synth(SynthArgs),
    /// Sample square patches from region masks into one corpus file per size.
    ExtractPatches(ExtractArgs),
    /// Train filter banks from a patch corpus.
    Train(TrainArgs),
    /// Encode every manifest image with a filter bank.
    Encode(EncodeArgs),
    /// Score two templates.
    Compare(CompareArgs),
    /// Evaluate banks on a manifest, or compare two bootstrap reports.
    Eval(EvalArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 20)]
    pub classes: usize,
    #[arg(long, default_value_t = 4)]
    pub samples: usize,
    #[arg(long, default_value_t = 512)]
    pub width: usize,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 1.5)]
    pub blur: f64,
    #[arg(long, default_value_t = 25.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 16)]
    pub max_shift: usize,
    #[arg(long, default_value_t = 0.25)]
    pub max_occlusion: f64,
    /// Source tag written to regions.csv.
    #[arg(long, default_value = "annotation")]
    pub region_source: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = "BSIF_OUT_DIR", default_value = ".")]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct ExtractArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory holding regions.csv and the region masks it names.
    #[arg(long)]
    pub regions: PathBuf,
    /// Patch sides (odd), comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = STANDARD_SIZES)]
    pub sizes: Vec<usize>,
    /// Patches per region and size.
    #[arg(long, default_value_t = DEFAULT_PER_REGION_COUNT)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Reject images that are not 512x64.
    #[arg(long)]
    pub strict_dims: bool,
    #[arg(long, env = "BSIF_OUT_DIR", default_value = ".")]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum NonlinearityArg {
    LogCosh,
    Cube,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainArgs {
    /// Directory written by extract-patches.
    #[arg(long, required_unless_present = "random")]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub l: Option<usize>,
    /// Train all 96 (n, l) pairs of the standard grid.
    #[arg(long, conflicts_with_all = ["n", "l"])]
    pub grid: bool,
    /// Emit seeded random orthonormal zero-sum filters instead of training.
    #[arg(long)]
    pub random: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = NonlinearityArg::LogCosh)]
    pub nonlinearity: NonlinearityArg,
    #[arg(long, default_value_t = 200)]
    pub max_iterations: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, env = "BSIF_OUT_DIR", default_value = ".")]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct EncodeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub bank: PathBuf,
    #[arg(long)]
    pub strict_dims: bool,
    /// Warn when this manifest shares subjects with the given ones.
    #[arg(long)]
    pub disjoint_from: Vec<PathBuf>,
    #[arg(long, env = "BSIF_OUT_DIR", default_value = ".")]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct CompareArgs {
    pub template_a: PathBuf,
    pub template_b: PathBuf,
    #[arg(long, default_value = "hd-mean", value_parser = STRATEGY_CHOICES)]
    pub strategy: String,
    #[arg(long, default_value_t = DEFAULT_MAX_SHIFT)]
    pub max_shift: u32,
}

#[derive(Args, Debug, Serialize)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "reports")]
    pub manifest: Option<PathBuf>,
    /// Filter bank file; may be repeated.
    #[arg(long)]
    pub bank: Vec<PathBuf>,
    /// Directory whose *.bsf files are all evaluated.
    #[arg(long)]
    pub bank_dir: Option<PathBuf>,
    #[arg(long, default_value = "all", value_parser = STRATEGY_CHOICES)]
    pub strategy: String,
    #[arg(long, default_value_t = DEFAULT_MAX_SHIFT)]
    pub max_shift: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of bootstrap resamples of d'.
    #[arg(long)]
    pub bootstrap: Option<usize>,
    /// Rank every (bank, strategy) cell instead of writing full reports.
    #[arg(long)]
    pub grid: bool,
    /// Also write ROC points as CSV.
    #[arg(long)]
    pub roc_csv: bool,
    #[arg(long)]
    pub strict_dims: bool,
    #[arg(long)]
    pub disjoint_from: Vec<PathBuf>,
    /// Two eval reports with bootstrap values to compare.
    #[arg(long, num_args = 2, conflicts_with_all = ["manifest", "bank", "bank_dir", "grid"])]
    pub reports: Vec<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_PERMUTATIONS)]
    pub permutations: usize,
    #[arg(long, env = "BSIF_OUT_DIR", default_value = ".")]
    #[serde(skip)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(Error::InvalidArgument("--jobs must be positive".into()));
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j).build_global() {
            warn!("could not size the worker pool: {e}");
        }
    }
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::ExtractPatches(a) => cmd_extract_patches(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Encode(a) => cmd_encode(&a),
        Command::Compare(a) => cmd_compare(&a),
        Command::Eval(a) => cmd_eval(&a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Prints one line to stdout; a closed pipe is not an error.
fn emit(line: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout().lock(), "{line}");
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("report types serialize")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::MalformedHeader {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

pub fn parse_strategies(s: &str) -> Result<Vec<Strategy>> {
    if s == "all" {
        Ok(Strategy::ALL.to_vec())
    } else {
        Ok(vec![s.parse()?])
    }
}

/// File-name-safe version of a manifest image path.
pub fn sanitize(image: &str) -> String {
    image
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') { c } else { '_' })
        .collect()
}

pub fn bank_file_name(n: usize, l: usize) -> String {
    format!("bank_n{n:02}_l{l:02}.bsf")
}

fn warn_shared_subjects(manifest: &DatasetManifest, others: &[PathBuf]) -> Result<()> {
    let mine = manifest.subjects();
    for p in others {
        let other = load_manifest(p)?;
        let shared: Vec<&str> = mine.intersection(&other.subjects()).copied().collect();
        if !shared.is_empty() {
            warn!(
                "{} shares {} subject(s) with {} (e.g. {}); stages should be subject-disjoint",
                manifest.base_dir.display(),
                shared.len(),
                p.display(),
                shared[0]
            );
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct SynthReport<'a> {
    config: &'a SynthArgs,
    images: usize,
    manifest: &'static str,
    regions: &'static str,
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let source: SourceTag = a.region_source.parse()?;
    let cfg = SynthConfig {
        classes: a.classes,
        samples_per_class: a.samples,
        width: a.width,
        height: a.height,
        blur_sigma: a.blur,
        noise_sigma: a.noise,
        max_shift: a.max_shift,
        max_occlusion: a.max_occlusion,
        seed: a.seed,
    };
    create_dir(&a.out)?;
    let samples = generate(&cfg)?;
    let manifest = write_dataset(&samples, &a.out)?;
    let mut regions = String::from("image,region,source,accepted\n");
    for r in &manifest.records {
        regions.push_str(&format!("{},{},{source},1\n", r.image, r.mask));
    }
    let path = a.out.join("regions.csv");
    fs::write(&path, regions).map_err(|e| Error::io(&path, e))?;
    let report = SynthReport {
        config: a,
        images: samples.len(),
        manifest: "manifest.csv",
        regions: "regions.csv",
    };
    write_json(&a.out.join("synth_report.json"), &report)?;
    emit(&to_json(&report));
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
struct RegionRow {
    image: String,
    region: String,
    source: String,
    accepted: String,
    #[serde(default)]
    pupil_x: Option<f64>,
    #[serde(default)]
    pupil_y: Option<f64>,
    #[serde(default)]
    pupil_r: Option<f64>,
    #[serde(default)]
    iris_x: Option<f64>,
    #[serde(default)]
    iris_y: Option<f64>,
    #[serde(default)]
    iris_r: Option<f64>,
}

fn parse_flag(s: &str) -> Result<bool> {
    match s.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Ok(true),
        "0" | "false" | "no" => Ok(false),
        other => Err(Error::Manifest(format!("accepted flag {other:?} is not boolean"))),
    }
}

/// Reads `regions.csv` from `dir`. Region paths are relative to `dir`;
/// image names must match the manifest's image column. Rows with all six
/// circle columns are unwrapped onto the polar grid first.
pub fn load_regions(dir: &Path, manifest: &DatasetManifest) -> Result<Vec<RegionEntry>> {
    let path = dir.join("regions.csv");
    if !path.is_file() {
        return Err(Error::InvalidArgument(format!("{} not found", path.display())));
    }
    let index: HashMap<&str, usize> = manifest.records.iter().enumerate().map(|(i, r)| (r.image.as_str(), i)).collect();
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(&path)
        .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (row, rec) in rdr.deserialize::<RegionRow>().enumerate() {
        let rec = rec.map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        let &image = index
            .get(rec.image.as_str())
            .ok_or_else(|| Error::Manifest(format!("{} row {}: image {} not in manifest", path.display(), row + 1, rec.image)))?;
        let grid = read_pnm(&dir.join(&rec.region))?.to_mask();
        let mut region = RegionMask {
            grid,
            source_id: rec.region.clone(),
        };
        let circles = [rec.pupil_x, rec.pupil_y, rec.pupil_r, rec.iris_x, rec.iris_y, rec.iris_r];
        match circles {
            [Some(px), Some(py), Some(pr), Some(ix), Some(iy), Some(ir)] => {
                let params = CircleParams {
                    pupil: Circle { x: px, y: py, r: pr },
                    iris: Circle { x: ix, y: iy, r: ir },
                };
                region = normalize_region(&region, &params)?;
            }
            [None, None, None, None, None, None] => {}
            _ => {
                return Err(Error::Manifest(format!(
                    "{} row {}: circle columns must be all set or all empty",
                    path.display(),
                    row + 1
                )))
            }
        }
        out.push(RegionEntry {
            image,
            region,
            source: rec.source.parse()?,
            accepted: parse_flag(&rec.accepted)?,
        });
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument(format!("{} lists no regions", path.display())));
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct CorpusFileReport<C> {
    config: C,
    report: CorpusReport,
    files: BTreeMap<usize, String>,
}

pub fn corpus_file_name(l: usize) -> String {
    format!("corpus_l{l}.bsp")
}

fn cmd_extract_patches(a: &ExtractArgs) -> Result<()> {
    let manifest = load_manifest(&a.manifest)?;
    let regions = load_regions(&a.regions, &manifest)?;
    let corpus = build_corpus(&manifest, &regions, &a.sizes, a.count, a.seed, a.strict_dims)?;
    create_dir(&a.out)?;
    let mut files = BTreeMap::new();
    for (&l, set) in &corpus.sets {
        let name = corpus_file_name(l);
        save_patch_set(set, &a.out.join(&name))?;
        files.insert(l, name);
    }
    let report = CorpusFileReport {
        config: a,
        report: corpus.report,
        files,
    };
    write_json(&a.out.join("corpus_report.json"), &report)?;
    emit(&to_json(&report));
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct BankReport<'a> {
    config: &'a TrainArgs,
    n: usize,
    l: usize,
    provenance: String,
    fingerprint: String,
    training: Option<TrainingReport>,
}

#[derive(Serialize)]
struct TrainSummaryEntry {
    file: String,
    n: usize,
    l: usize,
    fingerprint: String,
    converged: Option<bool>,
}

#[derive(Serialize)]
struct TrainSummary {
    banks: Vec<TrainSummaryEntry>,
    failures: Vec<BTreeMap<&'static str, String>>,
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let grid = if a.grid {
        standard_grid()
    } else {
        match (a.n, a.l) {
            (Some(n), Some(l)) => vec![(n, l)],
            _ => return Err(Error::InvalidArgument("give --n and --l, or --grid".into())),
        }
    };
    let nonlinearity = match a.nonlinearity {
        NonlinearityArg::LogCosh => Nonlinearity::LogCosh,
        NonlinearityArg::Cube => Nonlinearity::Cube,
    };
    for &(n, l) in &grid {
        TrainingConfig {
            nonlinearity,
            max_iterations: a.max_iterations,
            tolerance: a.tolerance,
            ..TrainingConfig::new(n, l, a.seed)
        }
        .validate()?;
    }

    type Outcome = Result<(FilterBank, Option<TrainingReport>)>;
    let results: Vec<((usize, usize), Outcome)> = if a.random {
        grid.iter()
            .map(|&(n, l)| ((n, l), random_orthonormal_bank(n, l, a.seed).map(|b| (b, None))))
            .collect()
    } else {
        let dir = a.corpus.as_ref().expect("clap requires --corpus");
        let corpus: CorpusFileReport<serde_json::Value> = read_json(&dir.join("corpus_report.json"))?;
        let tag = corpus
            .report
            .source
            .ok_or_else(|| Error::InvalidArgument(format!("{} holds an empty corpus", dir.display())))?;
        let sizes: BTreeSet<usize> = grid.iter().map(|&(_, l)| l).collect();
        let mut sets = BTreeMap::new();
        for l in sizes {
            sets.insert(l, load_patch_set(&dir.join(corpus_file_name(l)), tag)?);
        }
        if a.grid {
            train_grid(&sets, &grid, a.seed)
                .into_iter()
                .map(|(k, r)| (k, r.map(|(b, rep)| (b, Some(rep)))))
                .collect()
        } else {
            let (n, l) = grid[0];
            let cfg = TrainingConfig {
                nonlinearity,
                max_iterations: a.max_iterations,
                tolerance: a.tolerance,
                ..TrainingConfig::new(n, l, a.seed)
            };
            vec![((n, l), train_filters(&sets[&l], &cfg).map(|(b, rep)| (b, Some(rep))))]
        }
    };

    create_dir(&a.out)?;
    let mut summary = TrainSummary {
        banks: Vec::new(),
        failures: Vec::new(),
    };
    let mut first_err = None;
    for ((n, l), r) in results {
        match r {
            Ok((bank, training)) => {
                let file = bank_file_name(n, l);
                save_filter_bank(&bank, &a.out.join(&file))?;
                if let Some(t) = training.as_ref().filter(|t| !t.converged) {
                    warn!("n={n} l={l}: ICA stopped after {} iterations without converging", t.iterations);
                }
                let report = BankReport {
                    config: a,
                    n,
                    l,
                    provenance: bank.provenance.clone(),
                    fingerprint: bank.fingerprint().to_string(),
                    training: training.clone(),
                };
                write_json(&a.out.join(file.replace(".bsf", ".json")), &report)?;
                summary.banks.push(TrainSummaryEntry {
                    file,
                    n,
                    l,
                    fingerprint: report.fingerprint,
                    converged: training.map(|t| t.converged),
                });
            }
            Err(e) => {
                warn!("n={n} l={l}: {e}");
                summary.failures.push(BTreeMap::from([
                    ("n", n.to_string()),
                    ("l", l.to_string()),
                    ("error", e.to_string()),
                ]));
                first_err.get_or_insert(e);
            }
        }
    }
    emit(&to_json(&summary));
    first_err.map_or(Ok(()), Err)
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct EncodeReport<'a> {
    config: &'a EncodeArgs,
    bank_fingerprint: String,
    templates: BTreeMap<String, String>,
    failures: BTreeMap<String, String>,
}

fn cmd_encode(a: &EncodeArgs) -> Result<()> {
    let manifest = load_manifest(&a.manifest)?;
    warn_shared_subjects(&manifest, &a.disjoint_from)?;
    let bank = load_filter_bank(&a.bank)?;
    let mut names = BTreeSet::new();
    for r in &manifest.records {
        if !names.insert(sanitize(&r.image)) {
            return Err(Error::Manifest(format!("template name collision for {}", r.image)));
        }
    }
    create_dir(&a.out)?;
    let results: Vec<Result<String>> = (0..manifest.records.len())
        .into_par_iter()
        .map(|i| {
            let img = manifest.load_record(i, a.strict_dims)?;
            let t = if a.strict_dims { encode(&img, &bank)? } else { encode_any(&img, &bank)? };
            let name = format!("{}.bst", sanitize(&manifest.records[i].image));
            save_template(&t, &a.out.join(&name))?;
            Ok(name)
        })
        .collect();
    let mut report = EncodeReport {
        config: a,
        bank_fingerprint: bank.fingerprint().to_string(),
        templates: BTreeMap::new(),
        failures: BTreeMap::new(),
    };
    let mut first_err = None;
    for (r, res) in manifest.records.iter().zip(results) {
        match res {
            Ok(name) => {
                report.templates.insert(r.image.clone(), name);
            }
            Err(e) => {
                warn!("{}: {e}", r.image);
                report.failures.insert(r.image.clone(), e.to_string());
                first_err.get_or_insert(e);
            }
        }
    }
    write_json(&a.out.join("encode_report.json"), &report)?;
    emit(&to_json(&report));
    first_err.map_or(Ok(()), Err)
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct CompareLine<'a> {
    template_a: &'a Path,
    template_b: &'a Path,
    strategy: Strategy,
    value: f64,
    best_shift: Option<i32>,
    valid_bits: Option<u64>,
}

fn cmd_compare(a: &CompareArgs) -> Result<()> {
    let strategies = parse_strategies(&a.strategy)?;
    let range = ShiftRange::new(a.max_shift)?;
    let ta = load_template(&a.template_a)?;
    let tb = load_template(&a.template_b)?;
    if ta.bank_fingerprint != tb.bank_fingerprint {
        warn!("templates were produced by different filter banks");
    }
    for s in score_all(&ta, &tb, &strategies, range)? {
        emit(&to_json(&CompareLine {
                template_a: &a.template_a,
                template_b: &a.template_b,
                strategy: s.strategy,
                value: s.value,
                best_shift: s.best_shift,
                valid_bits: s.valid_bits,
            })
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bootstrap {
    pub values: Vec<f64>,
    pub summary: BoxplotSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub bank: String,
    pub bank_fingerprint: String,
    pub n: usize,
    pub l: usize,
    pub strategy: Strategy,
    pub metrics: Metrics,
    pub bootstrap: Option<Bootstrap>,
    pub roc: Vec<RocPoint>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairCounts {
    pub genuine: usize,
    pub impostor: usize,
    pub single_image_groups: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: serde_json::Value,
    pub pairs: PairCounts,
    pub impostor_scheme: String,
    pub evaluations: Vec<Evaluation>,
}

#[derive(Serialize)]
struct GridReport<'a> {
    config: &'a EvalArgs,
    pairs: PairCounts,
    impostor_scheme: &'static str,
    banks: Vec<String>,
    cells: Vec<GridCell>,
}

#[derive(Serialize)]
struct CompareReport<'a> {
    config: &'a EvalArgs,
    a: String,
    b: String,
    anova: AnovaResult,
}

fn bank_paths(a: &EvalArgs) -> Result<Vec<PathBuf>> {
    let mut paths = a.bank.clone();
    if let Some(dir) = &a.bank_dir {
        let mut found: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "bsf"))
            .collect();
        found.sort();
        paths.extend(found);
    }
    if paths.is_empty() {
        return Err(Error::InvalidArgument("no filter banks given (--bank or --bank-dir)".into()));
    }
    Ok(paths)
}

fn display_name(p: &Path) -> String {
    p.display().to_string()
}

fn load_images(manifest: &DatasetManifest, strict: bool) -> Result<Vec<NormalizedIris>> {
    (0..manifest.records.len())
        .into_par_iter()
        .map(|i| manifest.load_record(i, strict))
        .collect()
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    if !a.reports.is_empty() {
        return cmd_compare_reports(a);
    }
    let strategies = parse_strategies(&a.strategy)?;
    let range = ShiftRange::new(a.max_shift)?;
    let manifest = load_manifest(a.manifest.as_ref().expect("clap requires --manifest"))?;
    warn_shared_subjects(&manifest, &a.disjoint_from)?;
    let paths = bank_paths(a)?;
    let banks = paths.iter().map(|p| load_filter_bank(p)).collect::<Result<Vec<_>>>()?;
    let pairs = make_pairs(&manifest, a.seed);
    info!("{} genuine and {} impostor pairs", pairs.genuine.len(), pairs.impostor.len());
    let counts = PairCounts {
        genuine: pairs.genuine.len(),
        impostor: pairs.impostor.len(),
        single_image_groups: pairs.single_image_groups.len(),
    };
    if pairs.genuine.is_empty() || pairs.impostor.is_empty() {
        return Err(Error::DegenerateScores(format!(
            "{} genuine and {} impostor pairs; both are needed",
            counts.genuine, counts.impostor
        )));
    }
    let images = load_images(&manifest, a.strict_dims)?;
    create_dir(&a.out)?;

    if a.grid {
        let cells = grid_search(&images, &pairs, &banks, &strategies, range);
        for c in cells.iter().filter(|c| c.failure.is_some()) {
            warn!("bank {} {}: {}", c.bank_index, c.strategy, c.failure.as_deref().unwrap_or(""));
        }
        let report = GridReport {
            config: a,
            pairs: counts,
            impostor_scheme: IMPOSTOR_SCHEME,
            banks: paths.iter().map(|p| display_name(p)).collect(),
            cells,
        };
        write_json(&a.out.join("grid_report.json"), &report)?;
        for c in &report.cells {
            emit(&to_json(c));
        }
        return Ok(());
    }

    let mut evaluations = Vec::new();
    for (path, bank) in paths.iter().zip(&banks) {
        let sets = score_bank(&images, &pairs, bank, &strategies, range)?;
        for (&strategy, set) in strategies.iter().zip(&sets) {
            let bootstrap = match a.bootstrap {
                Some(k) => {
                    let values = bootstrap_dprime(set, k, a.seed)?;
                    let summary = boxplot_summary(&values)?;
                    Some(Bootstrap { values, summary })
                }
                None => None,
            };
            evaluations.push(Evaluation {
                bank: display_name(path),
                bank_fingerprint: bank.fingerprint().to_string(),
                n: bank.n(),
                l: bank.l(),
                strategy,
                metrics: metrics(set)?,
                bootstrap,
                roc: roc_points(set)?,
            });
        }
    }
    if a.roc_csv {
        for e in &evaluations {
            let path = a.out.join(format!("roc_{}_{}.csv", sanitize(e.bank.trim_end_matches(".bsf")), e.strategy));
            let mut w = csv::Writer::from_path(&path).map_err(|err| Error::Manifest(format!("{}: {err}", path.display())))?;
            for p in &e.roc {
                w.serialize(p).map_err(|err| Error::Manifest(format!("{}: {err}", path.display())))?;
            }
            w.flush().map_err(|err| Error::io(&path, err))?;
        }
    }
    let report = EvalReport {
        config: serde_json::to_value(a).expect("config serializes"),
        pairs: counts,
        impostor_scheme: IMPOSTOR_SCHEME.into(),
        evaluations,
    };
    write_json(&a.out.join("eval_report.json"), &report)?;
    for e in &report.evaluations {
        emit(&to_json(&serde_json::json!({
                "bank": e.bank,
                "strategy": e.strategy,
                "d_prime": e.metrics.d_prime,
                "eer": e.metrics.eer,
                "eer_threshold": e.metrics.eer_threshold,
                "bootstrap_median": e.bootstrap.as_ref().map(|b| b.summary.median),
            }))
        );
    }
    Ok(())
}

/// Picks the bootstrap series of a report: the evaluation matching
/// `strategy` when it is a single strategy, else the only one present.
fn bootstrap_series(path: &Path, strategy: &str) -> Result<(String, Vec<f64>)> {
    let report: EvalReport = read_json(path)?;
    let want = if strategy == "all" { None } else { Some(strategy.parse::<Strategy>()?) };
    let with: Vec<&Evaluation> = report
        .evaluations
        .iter()
        .filter(|e| e.bootstrap.is_some() && want.is_none_or(|s| s == e.strategy))
        .collect();
    match with.as_slice() {
        [e] => Ok((
            format!("{}:{}:{}", display_name(path), e.bank, e.strategy),
            e.bootstrap.as_ref().expect("filtered").values.clone(),
        )),
        [] => Err(Error::InvalidArgument(format!("{} has no matching bootstrap values", path.display()))),
        _ => Err(Error::InvalidArgument(format!(
            "{} has several bootstrap series; pick one with --strategy",
            path.display()
        ))),
    }
}

fn cmd_compare_reports(a: &EvalArgs) -> Result<()> {
    let (name_a, va) = bootstrap_series(&a.reports[0], &a.strategy)?;
    let (name_b, vb) = bootstrap_series(&a.reports[1], &a.strategy)?;
    let anova = compare_methods(&va, &vb, a.permutations, a.seed)?;
    let report = CompareReport {
        config: a,
        a: name_a,
        b: name_b,
        anova,
    };
    create_dir(&a.out)?;
    write_json(&a.out.join("compare_report.json"), &report)?;
    emit(&to_json(&report));
    Ok(())
}
