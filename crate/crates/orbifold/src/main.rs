//! Batch front end: read an orbifold/bundle document, run one stage of the
//! pipeline, and emit a report.
//!
//! Subcommands mirror the library's layers: `validate` runs every structural
//! check the document supports, `classify` prints the good/bad verdict with
//! its kernels, `vertical` builds the vertical bundle over the total space
//! and certifies the zero-section restriction, `sectors` prints the sector
//! census and degree-shift table, `euler` assembles the orbifold Euler class
//! (routing bad cocycles through the vertical bundle automatically),
//! `obstruct` runs the nonvanishing-section obstruction certificate, and
//! `example` materializes a built-in input document.
//!
//! Exit status: 0 when the requested checks pass, 1 when a validation or
//! numerical certificate fails, 2 on input errors (missing files, malformed
//! documents, documents lacking the data a subcommand needs).

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use orbifold::atlas::Atlas;
use orbifold::chernweil::{
    obstruction_verdict, orbifold_characteristic_class, ClassError, ClassKind, ClassOutcome,
    ClassPath,
};
use orbifold::doc::{self, Model};
use orbifold::gallery;
use orbifold::report::Report;
use orbifold::sectors::{all_sectors, census_coincidence, sector_census, ComplexStructure};
use orbifold::CheckCtx;

#[derive(Parser)]
#[command(
    name = "orbifold",
    version,
    about = "Validate orbifold atlases and vector bundles, classify cocycles, \
             and assemble characteristic classes over inertia sectors."
)]
struct Cli {
    /// Seed for all randomized sample points; reports are deterministic
    /// given the same inputs and seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Gauss-Legendre order for integrals (each is certified against the
    /// doubled order).
    #[arg(long, global = true, default_value_t = 48)]
    quad_order: usize,

    /// Quadrature convergence tolerance.
    #[arg(long, global = true, default_value_t = 1e-6)]
    tol: f64,

    /// Output format: human-readable text or a JSON report.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,

    /// Write output to a file instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Structured,
}

#[derive(Subcommand)]
enum Command {
    /// Run every structural validation the document supports.
    Validate { input: PathBuf },
    /// Classify the document's bundle as good or bad, with kernels.
    Classify { input: PathBuf },
    /// Build the vertical bundle over the total space, classify it, and
    /// certify the zero-section restriction.
    Vertical { input: PathBuf },
    /// Print the sector census and degree-shift table (and, when a bundle
    /// is present, the total-space census and the coincidence check).
    Sectors { input: PathBuf },
    /// Assemble the orbifold Euler class: per-sector degrees and integrals.
    Euler { input: PathBuf },
    /// Run the obstruction certificate on the document's first section.
    Obstruct { input: PathBuf },
    /// Write a built-in example document.
    Example {
        /// One of: s2-tangent, s2-trivial, s2-z3-bad, teardrop-<p>,
        /// flat-torus.
        name: String,
    },
}

/// A subcommand's result: rendered text, the same content as JSON, and
/// whether the checks it ran all passed.
struct Output {
    text: String,
    structured: Value,
    passed: bool,
}

/// Input-level failures (exit status 2).
struct InputError(String);

impl<E: std::error::Error> From<E> for InputError {
    fn from(e: E) -> Self {
        // Render the full source chain: serde errors carry the location,
        // compile errors the offending field. Wrappers that already print
        // their source are not repeated.
        let mut msg = e.to_string();
        let mut cause = e.source();
        while let Some(c) = cause {
            let text = c.to_string();
            if !msg.contains(&text) {
                let _ = write!(msg, ": {text}");
            }
            cause = c.source();
        }
        InputError(msg)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.tol <= 0.0 || !cli.tol.is_finite() {
        eprintln!("error: --tol must be positive");
        return ExitCode::from(2);
    }
    if cli.quad_order == 0 {
        eprintln!("error: --quad-order must be at least 1");
        return ExitCode::from(2);
    }
    let ctx = CheckCtx { seed: cli.seed, quad_order: cli.quad_order, quad_tol: cli.tol };
    let out = match run(&cli.command, &ctx) {
        Ok(out) => out,
        Err(InputError(msg)) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    let rendered = match cli.format {
        Format::Text => out.text,
        Format::Structured => {
            let mut s = serde_json::to_string_pretty(&out.structured)
                .expect("report values serialize");
            s.push('\n');
            s
        }
    };
    match &cli.out {
        Some(path) => {
            if let Err(e) = std::fs::write(path, rendered) {
                eprintln!("error: cannot write {}: {e}", path.display());
                return ExitCode::from(2);
            }
        }
        None => print!("{rendered}"),
    }
    if out.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn load(path: &PathBuf) -> Result<Model, InputError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| InputError(format!("cannot read {}: {e}", path.display())))?;
    let doc = doc::from_json(&text)?;
    Ok(doc::compile(&doc)?)
}

fn run(command: &Command, ctx: &CheckCtx) -> Result<Output, InputError> {
    match command {
        Command::Validate { input } => cmd_validate(&load(input)?, ctx),
        Command::Classify { input } => cmd_classify(&load(input)?, ctx),
        Command::Vertical { input } => cmd_vertical(&load(input)?, ctx),
        Command::Sectors { input } => cmd_sectors(&load(input)?, ctx),
        Command::Euler { input } => cmd_euler(&load(input)?, ctx),
        Command::Obstruct { input } => cmd_obstruct(&load(input)?, ctx),
        Command::Example { name } => cmd_example(name),
    }
}

/// The bundle, or an input error naming the subcommand that needs one.
fn need_bundle<'m>(model: &'m Model, what: &str) -> Result<&'m orbifold::bundles::Bundle, InputError> {
    model
        .bundle
        .as_ref()
        .ok_or_else(|| InputError(format!("'{}' declares no bundle; {what} needs one", model.name)))
}

/// Collect named validation reports into text plus JSON, tracking overall
/// success.
struct ReportSet {
    text: String,
    reports: Vec<Value>,
    passed: bool,
}

impl ReportSet {
    fn new() -> Self {
        ReportSet { text: String::new(), reports: Vec::new(), passed: true }
    }

    fn push(&mut self, report: &Report) {
        let _ = write!(self.text, "{report}");
        self.passed &= report.passed();
        self.reports.push(serde_json::to_value(report).expect("reports serialize"));
    }
}

/// Every validation the document's data supports, in dependency order.
fn validation_reports(model: &Model, ctx: &CheckCtx) -> ReportSet {
    let mut set = ReportSet::new();
    set.push(&model.atlas.validate(ctx));
    if let Some(bundle) = &model.bundle {
        set.push(&bundle.validate(&model.atlas, ctx));
        for (name, section) in &model.sections {
            let mut r = Report::new(format!("section '{name}'"));
            r.absorb("section", section.validate(&model.atlas, bundle, ctx));
            set.push(&r);
        }
        if let Some(connection) = &model.connection {
            set.push(&connection.validate(&model.atlas, bundle, ctx));
        }
    }
    if let Some(partition) = &model.partition {
        set.push(&partition.validate(&model.atlas, ctx));
    }
    if let Some(complex) = &model.complex {
        set.push(&complex.validate(&model.atlas, ctx));
    }
    set
}

fn cmd_validate(model: &Model, ctx: &CheckCtx) -> Result<Output, InputError> {
    let mut set = validation_reports(model, ctx);
    let verdict = if set.passed { "PASS" } else { "FAIL" };
    let _ = writeln!(set.text, "validation of '{}': {verdict}", model.name);
    Ok(Output {
        text: set.text,
        structured: json!({
            "command": "validate",
            "model": model.name,
            "reports": set.reports,
            "passed": set.passed,
        }),
        passed: set.passed,
    })
}

/// Validate the pieces a subcommand depends on; on failure, produce the
/// failing reports as that subcommand's output (exit status 1).
fn prevalidate(model: &Model, ctx: &CheckCtx, command: &str) -> Result<(), Output> {
    let mut set = validation_reports(model, ctx);
    if set.passed {
        return Ok(());
    }
    let _ = writeln!(set.text, "{command}: input '{}' fails validation", model.name);
    Err(Output {
        text: set.text,
        structured: json!({
            "command": command,
            "model": model.name,
            "reports": set.reports,
            "passed": false,
        }),
        passed: false,
    })
}

fn cmd_classify(model: &Model, ctx: &CheckCtx) -> Result<Output, InputError> {
    let bundle = need_bundle(model, "classify")?;
    if let Err(out) = prevalidate(model, ctx, "classify") {
        return Ok(out);
    }
    let classification = bundle.classify(&model.atlas);
    let mut text = String::new();
    let verdict = if classification.good { "Good" } else { "Bad" };
    let _ = writeln!(text, "bundle over '{}': {verdict}", model.name);
    for kernels in &classification.charts {
        let _ = writeln!(
            text,
            "  chart '{}': base kernel order {}, full kernel order {}",
            kernels.chart,
            kernels.base_kernel.len(),
            kernels.full_kernel.len(),
        );
    }
    let _ = writeln!(
        text,
        "{}",
        if classification.good {
            "every element acting trivially on a chart also fixes its fiber: \
             the cocycle descends to the underlying orbifold"
        } else {
            "some element acts trivially on a chart but moves its fiber: \
             the cocycle does not descend to the underlying orbifold"
        }
    );
    Ok(Output {
        text,
        structured: json!({
            "command": "classify",
            "model": model.name,
            "classification": serde_json::to_value(&classification).expect("serializes"),
            "passed": true,
        }),
        passed: true,
    })
}

fn cmd_vertical(model: &Model, ctx: &CheckCtx) -> Result<Output, InputError> {
    let bundle = need_bundle(model, "vertical")?;
    if let Err(out) = prevalidate(model, ctx, "vertical") {
        return Ok(out);
    }
    let total = bundle.total_space(&model.atlas);
    let vertical = bundle.vertical_bundle();
    let mut set = ReportSet::new();
    set.push(&total.validate(ctx));
    set.push(&vertical.validate(&total, ctx));
    let classification = vertical.classify(&total);
    let certificate = bundle.restriction_certificate(&model.atlas, ctx);
    set.push(&certificate);
    let passed = set.passed && classification.good;
    let mut text = set.text;
    let _ = writeln!(
        text,
        "vertical bundle over the total space of '{}': {}",
        model.name,
        if classification.good { "Good" } else { "Bad" },
    );
    let _ = writeln!(text, "vertical construction: {}", if passed { "PASS" } else { "FAIL" });
    Ok(Output {
        text,
        structured: json!({
            "command": "vertical",
            "model": model.name,
            "reports": set.reports,
            "vertical_classification": serde_json::to_value(&classification).expect("serializes"),
            "passed": passed,
        }),
        passed,
    })
}

/// Census lines for one atlas: class members by chart name, plus degree
/// shifts when a complex structure is available.
fn census_block(
    atlas: &Atlas,
    complex: Option<&ComplexStructure>,
    label: &str,
    text: &mut String,
) -> Result<Value, InputError> {
    let census = sector_census(atlas);
    let sectors = all_sectors(atlas, &census, complex)?;
    let _ = writeln!(text, "sector census over {label}: {} classes", census.classes.len());
    let mut classes = Vec::new();
    for class in &census.classes {
        let members: Vec<String> = class
            .members
            .iter()
            .map(|&(chart, conj)| format!("{}[{conj}]", atlas.charts[chart].name))
            .collect();
        let info = sectors.iter().find(|s| s.class_id == class.id);
        let shift = info.and_then(|s| s.shift.as_ref());
        let dim = info.map(|s| s.atlas.dim());
        let untwisted = if class.id == census.untwisted { " (untwisted)" } else { "" };
        let _ = write!(
            text,
            "  class {}{untwisted}: members {}",
            class.id,
            members.join(", "),
        );
        if let Some(d) = dim {
            let _ = write!(text, "; dim {d}");
        }
        match shift {
            Some(s) => {
                let _ = writeln!(text, "; shift {s}");
            }
            None => {
                let _ = writeln!(text, "; shift - (no complex structure)");
            }
        }
        classes.push(json!({
            "id": class.id,
            "untwisted": class.id == census.untwisted,
            "members": members,
            "dim": dim,
            "shift": shift.map(ToString::to_string),
        }));
    }
    Ok(json!({ "label": label, "classes": classes }))
}

fn cmd_sectors(model: &Model, ctx: &CheckCtx) -> Result<Output, InputError> {
    if let Err(out) = prevalidate(model, ctx, "sectors") {
        return Ok(out);
    }
    let mut text = String::new();
    let base =
        census_block(&model.atlas, model.complex.as_ref(), "the base (Q)", &mut text)?;
    let mut blocks = vec![base];
    let mut passed = true;
    let mut coincidence = None;
    if let Some(bundle) = &model.bundle {
        let total = bundle.total_space(&model.atlas);
        let total_complex =
            model.complex.as_ref().and_then(|c| c.for_total_space(bundle));
        blocks.push(census_block(
            &total,
            total_complex.as_ref(),
            "the total space (E)",
            &mut text,
        )?);
        let report = census_coincidence(&model.atlas, bundle);
        let _ = write!(text, "{report}");
        passed = report.passed();
        coincidence = Some(serde_json::to_value(&report).expect("serializes"));
    }
    Ok(Output {
        text,
        structured: json!({
            "command": "sectors",
            "model": model.name,
            "censuses": blocks,
            "coincidence": coincidence,
            "passed": passed,
        }),
        passed,
    })
}

/// One text line and one JSON record per class component.
fn component_lines(class: &orbifold::sectors::OrbifoldClass) -> (String, Vec<Value>) {
    let mut text = String::new();
    let mut rows = Vec::new();
    for comp in &class.components {
        let shift = comp.shift.as_ref().map(ToString::to_string);
        let degree = comp.degree().map(|d| d.to_string());
        let _ = write!(
            text,
            "  sector {}: form degree {}, shift {}, total degree {}",
            comp.sector,
            comp.form_degree,
            shift.as_deref().unwrap_or("-"),
            degree.as_deref().unwrap_or("-"),
        );
        match comp.integral {
            Some(v) => {
                let _ = writeln!(text, ", integral {v}");
            }
            None => {
                let _ = writeln!(text);
            }
        }
        rows.push(json!({
            "sector": comp.sector,
            "form_degree": comp.form_degree,
            "shift": shift,
            "degree": degree,
            "integral": comp.integral,
        }));
    }
    if class.components.is_empty() {
        let _ = writeln!(text, "  (no components: the atlas has no sectors)");
    }
    (text, rows)
}

fn cmd_euler(model: &Model, ctx: &CheckCtx) -> Result<Output, InputError> {
    let bundle = need_bundle(model, "euler")?;
    let connection = model.connection.as_ref().ok_or_else(|| {
        InputError(format!("'{}' declares no connection; euler needs one", model.name))
    })?;
    if let Err(out) = prevalidate(model, ctx, "euler") {
        return Ok(out);
    }
    let partition = model.partition_or_uniform();
    let outcome = orbifold_characteristic_class(
        &model.atlas,
        bundle,
        connection,
        ClassKind::Euler,
        model.complex.as_ref(),
        &partition,
        ctx,
    );
    render_class(model, outcome, "euler")
}

/// Shared rendering for assembled classes, converting integration failures
/// into exit-1 outputs and structural errors into input errors.
fn render_class(
    model: &Model,
    outcome: Result<ClassOutcome, ClassError>,
    command: &str,
) -> Result<Output, InputError> {
    let outcome = match outcome {
        Ok(o) => o,
        Err(ClassError::Integrate(e)) => {
            let text = format!("{command} on '{}': quadrature failed: {e}\n", model.name);
            return Ok(Output {
                text,
                structured: json!({
                    "command": command,
                    "model": model.name,
                    "error": e.to_string(),
                    "passed": false,
                }),
                passed: false,
            });
        }
        Err(e) => return Err(InputError(e.to_string())),
    };
    let mut text = String::new();
    let path = match outcome.path {
        ClassPath::Direct => "direct (good cocycle)",
        ClassPath::ViaVertical => "via the vertical bundle (bad cocycle)",
    };
    let _ = writeln!(text, "{} class of '{}', assembled {path}", outcome.kind.name(), model.name);
    let _ = writeln!(text, "convention: {}", outcome.convention);
    let mut structured = json!({
        "command": command,
        "model": model.name,
        "kind": outcome.kind.name(),
        "path": match outcome.path {
            ClassPath::Direct => "direct",
            ClassPath::ViaVertical => "via_vertical",
        },
        "convention": outcome.convention,
        "passed": true,
    });
    if let Some(total) = &outcome.total_class {
        let _ = writeln!(text, "over the total space (E), before restriction:");
        let (block, rows) = component_lines(total);
        text.push_str(&block);
        structured["total_components"] = Value::Array(rows);
    }
    let _ = writeln!(text, "on the base orbifold (Q):");
    let (block, rows) = component_lines(&outcome.class);
    text.push_str(&block);
    structured["components"] = Value::Array(rows);
    Ok(Output { text, structured, passed: true })
}

fn cmd_obstruct(model: &Model, ctx: &CheckCtx) -> Result<Output, InputError> {
    let bundle = need_bundle(model, "obstruct")?;
    let (section_name, section) = model.sections.first().ok_or_else(|| {
        InputError(format!("'{}' declares no sections; obstruct needs one", model.name))
    })?;
    if let Err(out) = prevalidate(model, ctx, "obstruct") {
        return Ok(out);
    }
    let partition = model.partition_or_uniform();
    let report = obstruction_verdict(
        &model.atlas,
        bundle,
        section,
        &partition,
        model.complex.as_ref(),
        ctx,
    );
    let passed = report.passed();
    let mut text = format!("obstruction certificate for section '{section_name}':\n");
    let _ = write!(text, "{report}");
    let _ = writeln!(
        text,
        "{}",
        if passed {
            "the nonvanishing section forces the assembled Euler class to vanish: PASS"
        } else {
            "obstruction certificate FAILED"
        }
    );
    Ok(Output {
        text,
        structured: json!({
            "command": "obstruct",
            "model": model.name,
            "section": section_name,
            "report": serde_json::to_value(&report).expect("serializes"),
            "passed": passed,
        }),
        passed,
    })
}

fn cmd_example(name: &str) -> Result<Output, InputError> {
    let model = gallery::by_name(name).ok_or_else(|| {
        InputError(format!(
            "unknown example '{name}'; available: {} (teardrop-<p> for 2 <= p <= 12)",
            gallery::NAMES.join(", "),
        ))
    })?;
    let doc = doc::document(&model)?;
    let text = doc::to_json(&doc);
    let structured = serde_json::to_value(&doc).expect("documents serialize");
    Ok(Output { text, structured, passed: true })
}
