//! Experiment runners. Each produces a CSV table (deterministic body) and a
//! JSON sidecar with full metadata; every CSV row carries the experiment
//! name, config hash, and seed.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use riskshare::conjugate::{conj_table, detect_degeneracy, ConjValue, ConjugateTable};
use riskshare::convexify::{run_replication, ReplicationExperiment, SlopeFit};
use riskshare::infconv::{
    conditional_reduction, dual_lower_bound, group_convolve, improperness_probe, solve,
    AgentPopulation, ProbeVerdict,
};
use riskshare::ordering::{consistency_spot_check, dilatation_monotone_check};
use riskshare::{Error, PartitionAlgebra, Result, RiskMeasure, Rv, Value};

use crate::config::{ExperimentConfig, ExperimentKind};

pub struct CsvDoc {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvDoc {
    fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    /// The deterministic part: header row plus data rows.
    pub fn body(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

pub struct RunContext<'a> {
    pub config: &'a ExperimentConfig,
    pub config_hash: String,
    pub seed: Option<u64>,
}

impl RunContext<'_> {
    fn prefix(&self) -> Vec<String> {
        vec![
            self.config.experiment.name().to_string(),
            self.config_hash.clone(),
            self.seed.map(|s| s.to_string()).unwrap_or_default(),
        ]
    }

    fn seed_or_zero(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    fn population(&self) -> Result<&AgentPopulation> {
        self.config
            .population
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("missing population".into()))
    }

    fn payoffs(&self) -> Result<Vec<Rv>> {
        self.config
            .payoffs
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("missing payoffs".into()))?
            .iter()
            .map(|v| Rv::new(v.clone()))
            .collect()
    }

    fn solver(&self) -> riskshare::infconv::SolverParams {
        let mut params = self.config.solver.clone();
        params.seed = self.seed_or_zero();
        params
    }
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn fmt_value(v: Value) -> String {
    v.to_string()
}

fn measure_kind(m: &RiskMeasure) -> String {
    serde_json::to_value(m)
        .ok()
        .and_then(|v| v.get("kind").and_then(|k| k.as_str().map(String::from)))
        .unwrap_or_else(|| "unknown".into())
}

pub fn run(ctx: &RunContext<'_>) -> Result<(CsvDoc, serde_json::Value)> {
    let space = &ctx.config.space;
    if let Some(pop) = &ctx.config.population {
        pop.validate(space)?;
    }
    match ctx.config.experiment {
        ExperimentKind::Eval => eval(ctx),
        ExperimentKind::Conj => conj(ctx),
        ExperimentKind::Infconv => infconv(ctx),
        ExperimentKind::Degeneracy => degeneracy(ctx),
        ExperimentKind::Improperness => improperness(ctx),
        ExperimentKind::Convexify => convexify(ctx),
        ExperimentKind::Consistency => consistency(ctx),
        ExperimentKind::IdentityVar => identity_var(ctx),
        ExperimentKind::GroupCheck => group_check(ctx),
        ExperimentKind::ConditionalCheck => conditional_check(ctx),
    }
}

fn eval(ctx: &RunContext<'_>) -> Result<(CsvDoc, serde_json::Value)> {
    let space = &ctx.config.space;
    let pop = ctx.population()?;
    let payoffs = ctx.payoffs()?;
    let mut doc = CsvDoc::new(&[
        "experiment",
        "config_hash",
        "seed",
        "agent",
        "kind",
        "payoff",
        "value",
    ]);
    for (i, agent) in pop.agents().iter().enumerate() {
        for (j, x) in payoffs.iter().enumerate() {
            let value = agent.measure.evaluate(space, x)?;
            let mut row = ctx.prefix();
            row.extend([
                i.to_string(),
                measure_kind(&agent.measure),
                j.to_string(),
                fmt(value),
            ]);
            doc.rows.push(row);
        }
    }
    Ok((doc, json!({ "payoffs": ctx.config.payoffs })))
}

fn table_rows(
    ctx: &RunContext<'_>,
    doc: &mut CsvDoc,
    agent: usize,
    kind: &str,
    table: &ConjugateTable,
) {
    let d = ctx.config.space.dim();
    for (q, value) in table.grid().iter().zip(table.values()) {
        let mut row = ctx.prefix();
        row.push(agent.to_string());
        row.push(kind.to_string());
        for k in 0..d {
            row.push(fmt(q.weights()[k]));
        }
        match value {
            ConjValue::Finite(c) => {
                row.push(fmt(*c));
                row.push("false".into());
                for _ in 0..d {
                    row.push(String::new());
                }
            }
            ConjValue::Diverged { witness } => {
                row.push(String::new());
                row.push("true".into());
                for k in 0..d {
                    row.push(fmt(witness.values()[k]));
                }
            }
        }
        doc.rows.push(row);
    }
}

fn conj(ctx: &RunContext<'_>) -> Result<(CsvDoc, serde_json::Value)> {
    let space = &ctx.config.space;
    let pop = ctx.population()?;
    let d = space.dim();
    let mut columns = vec![
        "experiment".to_string(),
        "config_hash".to_string(),
        "seed".to_string(),
        "agent".to_string(),
        "kind".to_string(),
    ];
    columns.extend((0..d).map(|k| format!("q_{k}")));
    columns.push("value".into());
    columns.push("diverged".into());
    columns.extend((0..d).map(|k| format!("w_{k}")));
    let mut doc = CsvDoc {
        columns,
        rows: Vec::new(),
    };
    let mut diverged_counts = Vec::new();
    for (i, agent) in pop.agents().iter().enumerate() {
        let table = conj_table(&agent.measure, space, &ctx.config.conjugate)?;
        diverged_counts.push(
            table
                .values()
                .iter()
                .filter(|v| v.is_diverged())
                .count(),
        );
        table_rows(ctx, &mut doc, i, &measure_kind(&agent.measure), &table);
    }
    Ok((
        doc,
        json!({ "diverged_per_agent": diverged_counts }),
    ))
}

fn infconv(ctx: &RunContext<'_>) -> Result<(CsvDoc, serde_json::Value)> {
    let space = &ctx.config.space;
    let pop = ctx.population()?;
    let payoffs = ctx.payoffs()?;
    let solver = ctx.solver();
    let tables: Vec<ConjugateTable> = pop
        .agents()
        .iter()
        .map(|a| conj_table(&a.measure, space, &ctx.config.conjugate))
        .collect::<Result<_>>()?;
    let mut doc = CsvDoc::new(&[
        "experiment",
        "config_hash",
        "seed",
        "payoff",
        "value",
        "dual_bound",
        "gap",
        "iterations",
        "restarts",
    ]);
    let mut detail = Vec::new();
    for (j, x) in payoffs.iter().enumerate() {
        let bound = dual_lower_bound(pop, space, x, &tables)?;
        let out = solve(pop, space, x, &solver)?.with_dual_bound(bound);
        let mut row = ctx.prefix();
        row.extend([
            j.to_string(),
            fmt_value(out.value),
            fmt_value(bound),
            out.gap.map(fmt).unwrap_or_default(),
            out.meta.iterations.to_string(),
            out.meta.restarts.to_string(),
        ]);
        doc.rows.push(row);
        detail.push(json!({
            "payoff": j,
            "result": out,
        }));
    }
    Ok((doc, json!({ "solves": detail })))
}

fn degeneracy(ctx: &RunContext<'_>) -> Result<(CsvDoc, serde_json::Value)> {
    let space = &ctx.config.space;
    let pop = ctx.population()?;
    let mut doc = CsvDoc::new(&[
        "experiment",
        "config_hash",
        "seed",
        "agent",
        "kind",
        "verdict",
        "witness_value",
    ]);
    let mut verdicts = Vec::new();
    for (i, agent) in pop.agents().iter().enumerate() {
        let verdict = detect_degeneracy(&agent.measure, space, &ctx.config.conjugate, None)?;
        let mut row = ctx.prefix();
        row.extend([
            i.to_string(),
            measure_kind(&agent.measure),
            if verdict.degenerate {
                "degenerate".to_string()
            } else {
                "finite".to_string()
            },
            verdict
                .witness
                .as_ref()
                .map(|w| fmt(w.value))
                .unwrap_or_default(),
        ]);
        doc.rows.push(row);
        verdicts.push(json!({ "agent": i, "verdict": verdict }));
    }
    Ok((doc, json!({ "verdicts": verdicts })))
}

fn improperness(ctx: &RunContext<'_>) -> Result<(CsvDoc, serde_json::Value)> {
    let space = &ctx.config.space;
    let pop = ctx.population()?;
    let steps = ctx
        .config
        .improperness
        .as_ref()
        .map(|s| s.steps)
        .unwrap_or(8);
    let verdict = improperness_probe(pop, space, steps)?;
    let mut doc = CsvDoc::new(&[
        "experiment",
        "config_hash",
        "seed",
        "verdict",
        "objective",
        "agent_i",
        "agent_j",
    ]);
    let mut row = ctx.prefix();
    match &verdict {
        ProbeVerdict::FiniteSoFar { worst_objective } => {
            row.extend([
                "finite-so-far".to_string(),
                fmt(*worst_objective),
                String::new(),
                String::new(),
            ]);
        }
        ProbeVerdict::MinusInf {
            pair, objectives, ..
        } => {
            row.extend([
                "minus-inf".to_string(),
                fmt(objectives.last().unwrap().1),
                pair.0.to_string(),
                pair.1.to_string(),
            ]);
        }
    }
    doc.rows.push(row);
    Ok((doc, json!({ "verdict": verdict })))
}

fn convexify(ctx: &RunContext<'_>) -> Result<(CsvDoc, serde_json::Value)> {
    let space = &ctx.config.space;
    let pop = ctx.population()?;
    let section = ctx
        .config
        .convexify
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("missing [convexify] section".into()))?;
    let experiment = ReplicationExperiment {
        base: pop.agents()[0].measure.clone(),
        n_list: section.n_list.clone(),
        segment: (
            Rv::new(section.segment_x.clone())?,
            Rv::new(section.segment_y.clone())?,
        ),
        lambda_grid: section.lambda_grid.clone(),
    };
    let out = run_replication(&experiment, space, &ctx.solver(), &ctx.config.conjugate)?;
    let mut doc = CsvDoc::new(&[
        "experiment",
        "config_hash",
        "seed",
        "n",
        "convexity_violation",
        "duality_gap",
    ]);
    for r in &out.report.per_n {
        let mut row = ctx.prefix();
        row.extend([
            r.n.to_string(),
            fmt(r.convexity_violation),
            fmt(r.duality_gap),
        ]);
        doc.rows.push(row);
    }
    let slope = match out.report.fitted_slope {
        SlopeFit::Fitted(s) => json!(s),
        SlopeFit::Saturated => json!("saturated"),
    };
    Ok((
        doc,
        json!({ "slope": slope, "values": out.values, "floor": out.floor }),
    ))
}

fn consistency(ctx: &RunContext<'_>) -> Result<(CsvDoc, serde_json::Value)> {
    let space = &ctx.config.space;
    let pop = ctx.population()?;
    let section = ctx
        .config
        .consistency
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("missing [consistency] section".into()))?;
    let q = section
        .q
        .clone()
        .unwrap_or_else(|| space.reference_measure());
    let seed = ctx.seed_or_zero();
    let mut doc = CsvDoc::new(&[
        "experiment",
        "config_hash",
        "seed",
        "agent",
        "kind",
        "check",
        "pass",
    ]);
    let mut reports = Vec::new();
    for (i, agent) in pop.agents().iter().enumerate() {
        let dil = dilatation_monotone_check(&agent.measure, space, &q, section.samples, seed)?;
        let cons = consistency_spot_check(&agent.measure, space, &q, section.samples, seed)?;
        for (check, pass) in [("dilatation", dil.pass), ("consistency", cons.pass)] {
            let mut row = ctx.prefix();
            row.extend([
                i.to_string(),
                measure_kind(&agent.measure),
                check.to_string(),
                pass.to_string(),
            ]);
            doc.rows.push(row);
        }
        reports.push(json!({ "agent": i, "dilatation": dil, "consistency": cons }));
    }
    Ok((doc, json!({ "reports": reports })))
}

fn identity_var(ctx: &RunContext<'_>) -> Result<(CsvDoc, serde_json::Value)> {
    let space = &ctx.config.space;
    let d = space.dim();
    let p0 = space.probs()[0];
    if space.probs().iter().any(|p| (p - p0).abs() > 1e-12) {
        return Err(Error::InvalidParameter(
            "the identity-var experiment needs a uniform space".into(),
        ));
    }
    let samples = ctx
        .config
        .identity_var
        .as_ref()
        .map(|s| s.samples)
        .unwrap_or(200);
    let beta = 1.0 / (2.0 * d as f64);
    let var = RiskMeasure::var(beta);
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed_or_zero());
    let mut matches = 0usize;
    for _ in 0..samples {
        let x = Rv::new((0..d).map(|_| rng.gen_range(-5.0..5.0)).collect())?;
        if var.evaluate(space, &x)? == RiskMeasure::EssSup.evaluate(space, &x)? {
            matches += 1;
        }
    }
    let pop = AgentPopulation::new(
        vec![
            riskshare::infconv::Agent::new(1.0, var.clone()),
            riskshare::infconv::Agent::new(1.0, var),
        ],
        riskshare::infconv::Mode::Unweighted,
    )?;
    let indicator = Rv::indicator(d, 0);
    let conv = solve(&pop, space, &indicator, &ctx.solver())?;
    let at_sum = RiskMeasure::var(2.0 * beta).evaluate(space, &indicator)?;

    let mut doc = CsvDoc::new(&["experiment", "config_hash", "seed", "quantity", "value"]);
    for (quantity, value) in [
        ("samples", samples.to_string()),
        ("var_esssup_matches", matches.to_string()),
        ("convolution_at_indicator", fmt_value(conv.value)),
        ("var_at_summed_level", fmt(at_sum)),
    ] {
        let mut row = ctx.prefix();
        row.extend([quantity.to_string(), value]);
        doc.rows.push(row);
    }
    Ok((
        doc,
        json!({
            "beta": beta,
            "matches": matches,
            "samples": samples,
            "convolution": conv,
            "var_at_summed_level": at_sum,
        }),
    ))
}

fn group_check(ctx: &RunContext<'_>) -> Result<(CsvDoc, serde_json::Value)> {
    let space = &ctx.config.space;
    let pop = ctx.population()?;
    let payoffs = ctx.payoffs()?;
    let section = ctx
        .config
        .group_check
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("missing [group_check] section".into()))?;
    let solver = ctx.solver();
    let mut doc = CsvDoc::new(&[
        "experiment",
        "config_hash",
        "seed",
        "payoff",
        "grouped_value",
        "direct_value",
        "abs_diff",
    ]);
    for (j, x) in payoffs.iter().enumerate() {
        let grouped = group_convolve(pop, &section.groups, space, x, &solver)?;
        let direct = solve(pop, space, x, &solver)?;
        let diff = match (grouped.value, direct.value) {
            (Value::Finite(a), Value::Finite(b)) => fmt((a - b).abs()),
            _ => String::new(),
        };
        let mut row = ctx.prefix();
        row.extend([
            j.to_string(),
            fmt_value(grouped.value),
            fmt_value(direct.value),
            diff,
        ]);
        doc.rows.push(row);
    }
    Ok((doc, json!({ "groups": section.groups })))
}

fn conditional_check(ctx: &RunContext<'_>) -> Result<(CsvDoc, serde_json::Value)> {
    let space = &ctx.config.space;
    let pop = ctx.population()?;
    let payoffs = ctx.payoffs()?;
    let section = ctx
        .config
        .conditional_check
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("missing [conditional_check] section".into()))?;
    let partition = PartitionAlgebra::new(space.dim(), section.blocks.clone())?;
    let q = section
        .q
        .clone()
        .unwrap_or_else(|| space.reference_measure());
    let solver = ctx.solver();
    let mut doc = CsvDoc::new(&[
        "experiment",
        "config_hash",
        "seed",
        "payoff",
        "value_all",
        "value_blockwise",
        "diff",
    ]);
    let mut detail = Vec::new();
    for (j, x) in payoffs.iter().enumerate() {
        let out = conditional_reduction(pop, space, &partition, &q, x, &solver)?;
        let diff = match (out.value_all, out.value_g) {
            (Value::Finite(a), Value::Finite(b)) => fmt((a - b).abs()),
            _ => String::new(),
        };
        let mut row = ctx.prefix();
        row.extend([
            j.to_string(),
            fmt_value(out.value_all),
            fmt_value(out.value_g),
            diff,
        ]);
        doc.rows.push(row);
        detail.push(json!({ "payoff": j, "reduction": out }));
    }
    Ok((doc, json!({ "reductions": detail })))
}
