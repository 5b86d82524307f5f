//! Model specification and design-matrix construction.
//!
//! A [`ModelSpec`] declares the baseline grids, the covariate blocks, the
//! heterogeneity switch and the simulation settings. [`resolve_schema`] fixes
//! the concrete column list against a dataset (categorical levels, largest
//! hospitals, reference categories), and [`build_rows`] produces one sparse
//! covariate row per spell — the same row serves both competing transitions
//! of the spell, with transition-specific coefficients.
//!
//! Time-dependent pieces (treatment status derived from adoption dates,
//! experience bins, trends, year dummies) are evaluated at the clock time of
//! leaving the state. Reference categories: the largest specialty, the
//! largest hospital (hospitals outside the top K share the omitted pool),
//! the smallest diagnosis group, the first region and the first sample year.
//! There is no intercept column; the baseline step levels play that role per
//! transition.

use crate::baseline::BaselineGrid;
use crate::error::{Error, Result};
use crate::spells::SpellRecord;
use crate::states::Transition;
use crate::time::{quarter_of, year_of};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Treatment-effect parameterization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McMode {
    /// No treatment block (used by the pre-trend design).
    None,
    /// A single coefficient per transition.
    Overall,
    /// One coefficient per specialty of the treating physician.
    BySpecialty,
    /// One coefficient per interval of years spent under the new system.
    ByExperience { cuts_years: Vec<f64> },
}

impl McMode {
    pub fn by_experience_default() -> Self {
        McMode::ByExperience {
            cuts_years: vec![2.0, 5.0, 10.0],
        }
    }
}

/// Covariate blocks entering every transition's regression function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CovariateConfig {
    pub mc: McMode,
    pub sex: bool,
    pub age: bool,
    /// (age/150)².
    pub age_quadratic: bool,
    pub cci: bool,
    pub dept_size: bool,
    pub specialty_dummies: bool,
    /// Dummies for the K hospitals with the most transitions; 0 disables.
    pub hospital_dummies: usize,
    pub diagnosis_dummies: bool,
    pub region_dummies: bool,
    pub year_dummies: bool,
    /// Linear and quadratic quarterly trends.
    pub quarterly_trends: bool,
    /// Specialty × linear quarterly trend interactions.
    pub specialty_trends: bool,
}

impl Default for CovariateConfig {
    fn default() -> Self {
        Self {
            mc: McMode::Overall,
            sex: true,
            age: true,
            age_quadratic: true,
            cci: true,
            dept_size: false,
            specialty_dummies: false,
            hospital_dummies: 0,
            diagnosis_dummies: false,
            region_dummies: false,
            year_dummies: false,
            quarterly_trends: false,
            specialty_trends: false,
        }
    }
}

/// Baseline grids per transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub hospital_to_home: BaselineGrid,
    pub hospital_to_death: BaselineGrid,
    pub home_to_readmission: BaselineGrid,
    pub home_to_death: BaselineGrid,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            hospital_to_home: BaselineGrid::default_for(Transition::Discharge),
            hospital_to_death: BaselineGrid::default_for(Transition::HospitalDeath),
            home_to_readmission: BaselineGrid::default_for(Transition::Readmission),
            home_to_death: BaselineGrid::default_for(Transition::HomeDeath),
        }
    }
}

impl GridConfig {
    pub fn as_array(&self) -> [BaselineGrid; 4] {
        [
            self.hospital_to_home.clone(),
            self.hospital_to_death.clone(),
            self.home_to_readmission.clone(),
            self.home_to_death.clone(),
        ]
    }
}

/// Complete model specification. Serialized as the `model.json` config;
/// unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub grids: GridConfig,
    pub covariates: CovariateConfig,
    /// Two-factor correlated heterogeneity on/off.
    pub frailty: bool,
    /// Monte Carlo draws per patient for the simulated likelihood.
    pub draws: usize,
    /// Seed of the frozen frailty draws.
    pub seed: u64,
    /// Day the sample window starts (origin of trends), day 0 = 1996-01-01.
    #[serde(with = "crate::time::serde_day")]
    pub sample_start: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            grids: GridConfig::default(),
            covariates: CovariateConfig::default(),
            frailty: true,
            draws: 100,
            seed: 0,
            sample_start: 0.0,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        for g in self.grids.as_array() {
            BaselineGrid::new(g.starts.clone(), g.horizon)?;
        }
        if self.draws == 0 {
            return Err(Error::ModelSpec("draws must be at least 1".into()));
        }
        if let McMode::ByExperience { cuts_years } = &self.covariates.mc {
            if cuts_years.is_empty() {
                return Err(Error::ModelSpec("empty experience cuts".into()));
            }
            let mut prev = 0.0;
            for &c in cuts_years {
                if !(c > prev) {
                    return Err(Error::ModelSpec(format!(
                        "experience cuts must be positive and increasing, got {c}"
                    )));
                }
                prev = c;
            }
        }
        Ok(())
    }

    pub fn from_json_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let spec: ModelSpec = serde_json::from_str(&text)
            .map_err(|e| Error::json(path.display().to_string(), e))?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Concrete column list resolved against a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedSchema {
    pub columns: Vec<String>,
    /// Indices of the treatment block within `columns`.
    pub mc_block: Vec<usize>,
    /// Indices of the pre-trend interaction block (empty for the main design).
    pub pretrend_block: Vec<usize>,
    /// Specialties by descending spell count; first is the dummy reference.
    pub specialty_levels: Vec<String>,
    /// Top-K hospitals by descending transition count; first is the reference.
    pub hospital_levels: Vec<String>,
    /// Diagnosis groups present, ascending; first is the reference.
    pub diagnosis_levels: Vec<u8>,
    /// Regions present, ascending; first is the reference.
    pub region_levels: Vec<String>,
    /// Exit years present, ascending; first is the reference.
    pub year_levels: Vec<i32>,
    /// Cubic pre-trend term included.
    pub pretrend_cubic: bool,
}

/// One spell's covariate row, sparse over the schema columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseRow {
    pub idx: Vec<u32>,
    pub val: Vec<f64>,
}

impl SparseRow {
    pub fn dot(&self, beta: &[f64]) -> f64 {
        self.idx
            .iter()
            .zip(&self.val)
            .map(|(&i, &v)| v * beta[i as usize])
            .sum()
    }

    /// Dot product skipping the given column indices.
    pub fn dot_excluding(&self, beta: &[f64], skip: &[usize]) -> f64 {
        self.idx
            .iter()
            .zip(&self.val)
            .filter(|(&i, _)| !skip.contains(&(i as usize)))
            .map(|(&i, &v)| v * beta[i as usize])
            .sum()
    }

    pub fn to_dense(&self, width: usize) -> Vec<f64> {
        let mut out = vec![0.0; width];
        for (&i, &v) in self.idx.iter().zip(&self.val) {
            out[i as usize] = v;
        }
        out
    }
}

/// Design matrices: the resolved schema plus one row per spell (shared by the
/// spell's competing transitions).
#[derive(Debug, Clone)]
pub struct Design {
    pub schema: ResolvedSchema,
    pub rows: Vec<SparseRow>,
}

fn count_levels<'a>(it: impl Iterator<Item = &'a str>) -> Vec<(String, usize)> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for v in it {
        *counts.entry(v).or_default() += 1;
    }
    let mut levels: Vec<(String, usize)> = counts
        .into_iter()
        .map(|(k, c)| (k.to_string(), c))
        .collect();
    levels.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    levels
}

/// Fix the concrete column list for `spec` against `spells`.
pub fn resolve_schema(spells: &[SpellRecord], spec: &ModelSpec) -> Result<ResolvedSchema> {
    if spells.is_empty() {
        return Err(Error::Design("no spells to resolve a schema against".into()));
    }
    let cov = &spec.covariates;

    let specialty_levels: Vec<String> = count_levels(spells.iter().map(|s| s.specialty.as_str()))
        .into_iter()
        .map(|(l, _)| l)
        .collect();

    let hospital_levels: Vec<String> = if cov.hospital_dummies > 0 {
        count_levels(
            spells
                .iter()
                .filter(|s| s.event.is_some())
                .map(|s| s.hospital_id.as_str()),
        )
        .into_iter()
        .take(cov.hospital_dummies)
        .map(|(l, _)| l)
        .collect()
    } else {
        Vec::new()
    };

    let mut diagnosis_levels: Vec<u8> = spells.iter().map(|s| s.diagnosis).collect();
    diagnosis_levels.sort_unstable();
    diagnosis_levels.dedup();

    let mut region_levels: Vec<String> = spells.iter().map(|s| s.region.clone()).collect();
    region_levels.sort();
    region_levels.dedup();

    let mut year_levels: Vec<i32> = spells.iter().map(|s| year_of(s.exit_day())).collect();
    year_levels.sort_unstable();
    year_levels.dedup();

    let mut columns = Vec::new();
    let mut mc_block = Vec::new();
    match &cov.mc {
        McMode::None => {}
        McMode::Overall => {
            mc_block.push(columns.len());
            columns.push("mc".to_string());
        }
        McMode::BySpecialty => {
            for level in &specialty_levels {
                mc_block.push(columns.len());
                columns.push(format!("mc:{level}"));
            }
        }
        McMode::ByExperience { cuts_years } => {
            let mut lo = 0.0;
            for &hi in cuts_years {
                mc_block.push(columns.len());
                columns.push(format!("mc:exp[{lo},{hi})"));
                lo = hi;
            }
            mc_block.push(columns.len());
            columns.push(format!("mc:exp[{lo},inf)"));
        }
    }
    if cov.sex {
        columns.push("sex".into());
    }
    if cov.age {
        columns.push("age".into());
    }
    if cov.age_quadratic {
        columns.push("age_sq".into());
    }
    if cov.cci {
        columns.push("cci".into());
    }
    if cov.dept_size {
        columns.push("dept_size".into());
    }
    if cov.specialty_dummies {
        for level in specialty_levels.iter().skip(1) {
            columns.push(format!("spec:{level}"));
        }
    }
    for level in hospital_levels.iter().skip(1) {
        columns.push(format!("hosp:{level}"));
    }
    if cov.diagnosis_dummies {
        for level in diagnosis_levels.iter().skip(1) {
            columns.push(format!("diag:{level}"));
        }
    }
    if cov.region_dummies {
        for level in region_levels.iter().skip(1) {
            columns.push(format!("region:{level}"));
        }
    }
    if cov.year_dummies {
        for level in year_levels.iter().skip(1) {
            columns.push(format!("year:{level}"));
        }
    }
    if cov.quarterly_trends {
        columns.push("trend_q".into());
        columns.push("trend_q2".into());
    }
    if cov.specialty_trends {
        for level in specialty_levels.iter().skip(1) {
            columns.push(format!("trendq:{level}"));
        }
    }

    Ok(ResolvedSchema {
        columns,
        mc_block,
        pretrend_block: Vec::new(),
        specialty_levels,
        hospital_levels,
        diagnosis_levels,
        region_levels,
        year_levels,
        pretrend_cubic: false,
    })
}

struct RowBuilder<'a> {
    spec: &'a ModelSpec,
    schema: &'a ResolvedSchema,
    col_of: HashMap<&'a str, usize>,
    start_quarter: i64,
}

impl<'a> RowBuilder<'a> {
    fn new(spec: &'a ModelSpec, schema: &'a ResolvedSchema) -> Self {
        let col_of = schema
            .columns
            .iter()
            .enumerate()
            .map(|(i, c)| (c.as_str(), i))
            .collect();
        Self {
            spec,
            schema,
            col_of,
            start_quarter: quarter_of(spec.sample_start),
        }
    }

    fn require(&self, name: &str, row: usize) -> std::result::Result<usize, String> {
        self.col_of
            .get(name)
            .copied()
            .ok_or_else(|| format!("row {row}: unknown category column `{name}`"))
    }

    fn quarter(&self, spell: &SpellRecord) -> f64 {
        (quarter_of(spell.exit_day()) - self.start_quarter) as f64
    }

    fn experience_bin(cuts: &[f64], years: f64) -> usize {
        let y = years.max(0.0);
        cuts.iter().position(|&c| y < c).unwrap_or(cuts.len())
    }

    fn row(&self, spell: &SpellRecord, row_no: usize) -> std::result::Result<SparseRow, String> {
        let cov = &self.spec.covariates;
        let mut idx: Vec<u32> = Vec::new();
        let mut val: Vec<f64> = Vec::new();
        let mut push = |i: usize, v: f64| {
            if v != 0.0 {
                idx.push(i as u32);
                val.push(v);
            }
        };

        match &cov.mc {
            McMode::None => {}
            McMode::Overall => {
                if spell.mc == 1 {
                    push(self.schema.mc_block[0], 1.0);
                }
            }
            McMode::BySpecialty => {
                if spell.mc == 1 {
                    let pos = self
                        .schema
                        .specialty_levels
                        .iter()
                        .position(|l| *l == spell.specialty)
                        .ok_or_else(|| {
                            format!("row {row_no}: unknown specialty `{}`", spell.specialty)
                        })?;
                    push(self.schema.mc_block[pos], 1.0);
                }
            }
            McMode::ByExperience { cuts_years } => {
                if spell.mc == 1 {
                    let adoption = spell.adoption_day.ok_or_else(|| {
                        format!("row {row_no}: treated spell without an adoption day")
                    })?;
                    let years = (spell.exit_day() - adoption) / 365.25;
                    let bin = Self::experience_bin(cuts_years, years);
                    push(self.schema.mc_block[bin], 1.0);
                }
            }
        }
        if cov.sex {
            push(self.require("sex", row_no)?, spell.sex as f64);
        }
        if cov.age {
            push(self.require("age", row_no)?, spell.age);
        }
        if cov.age_quadratic {
            let a = spell.age / 150.0;
            push(self.require("age_sq", row_no)?, a * a);
        }
        if cov.cci {
            push(self.require("cci", row_no)?, spell.cci);
        }
        if cov.dept_size {
            push(self.require("dept_size", row_no)?, spell.dept_size);
        }
        if cov.specialty_dummies {
            if !self.schema.specialty_levels.contains(&spell.specialty) {
                return Err(format!(
                    "row {row_no}: unknown specialty `{}`",
                    spell.specialty
                ));
            }
            if self.schema.specialty_levels[0] != spell.specialty {
                let c = self.require(&format!("spec:{}", spell.specialty), row_no)?;
                push(c, 1.0);
            }
        }
        if cov.hospital_dummies > 0
            && self.schema.hospital_levels.len() > 1
            && self.schema.hospital_levels[1..].contains(&spell.hospital_id)
        {
            let c = self.require(&format!("hosp:{}", spell.hospital_id), row_no)?;
            push(c, 1.0);
        }
        if cov.diagnosis_dummies {
            if !self.schema.diagnosis_levels.contains(&spell.diagnosis) {
                return Err(format!(
                    "row {row_no}: unknown diagnosis group {}",
                    spell.diagnosis
                ));
            }
            if self.schema.diagnosis_levels[0] != spell.diagnosis {
                let c = self.require(&format!("diag:{}", spell.diagnosis), row_no)?;
                push(c, 1.0);
            }
        }
        if cov.region_dummies {
            if !self.schema.region_levels.contains(&spell.region) {
                return Err(format!("row {row_no}: unknown region `{}`", spell.region));
            }
            if self.schema.region_levels[0] != spell.region {
                let c = self.require(&format!("region:{}", spell.region), row_no)?;
                push(c, 1.0);
            }
        }
        if cov.year_dummies {
            let year = year_of(spell.exit_day());
            if !self.schema.year_levels.contains(&year) {
                return Err(format!("row {row_no}: year {year} outside the resolved set"));
            }
            if self.schema.year_levels[0] != year {
                let c = self.require(&format!("year:{year}"), row_no)?;
                push(c, 1.0);
            }
        }
        let q = self.quarter(spell);
        if cov.quarterly_trends {
            push(self.require("trend_q", row_no)?, q);
            push(self.require("trend_q2", row_no)?, q * q);
        }
        if cov.specialty_trends && self.schema.specialty_levels[0] != spell.specialty {
            if !self.schema.specialty_levels.contains(&spell.specialty) {
                return Err(format!(
                    "row {row_no}: unknown specialty `{}`",
                    spell.specialty
                ));
            }
            let c = self.require(&format!("trendq:{}", spell.specialty), row_no)?;
            push(c, q);
        }
        if !self.schema.pretrend_block.is_empty() && spell.adoption_day.is_some() {
            push(self.schema.pretrend_block[0], q);
            push(self.schema.pretrend_block[1], q * q);
            if self.schema.pretrend_cubic {
                push(self.schema.pretrend_block[2], q * q * q);
            }
        }
        Ok(SparseRow { idx, val })
    }
}

/// Build covariate rows for `spells` against an already-resolved schema.
/// Errors list the offending rows (unknown categorical levels, treated
/// spells without adoption dates).
pub fn build_rows(
    spells: &[SpellRecord],
    spec: &ModelSpec,
    schema: &ResolvedSchema,
) -> Result<Vec<SparseRow>> {
    let builder = RowBuilder::new(spec, schema);
    let mut rows = Vec::with_capacity(spells.len());
    let mut errors = Vec::new();
    for (i, spell) in spells.iter().enumerate() {
        match builder.row(spell, i) {
            Ok(r) => rows.push(r),
            Err(e) => {
                if errors.len() < 20 {
                    errors.push(e);
                }
            }
        }
    }
    if !errors.is_empty() {
        return Err(Error::Design(errors.join("; ")));
    }
    Ok(rows)
}

/// Resolve the schema and build rows in one step.
pub fn build_design(spells: &[SpellRecord], spec: &ModelSpec) -> Result<Design> {
    spec.validate()?;
    let schema = resolve_schema(spells, spec)?;
    let rows = build_rows(spells, spec, &schema)?;
    Ok(Design { schema, rows })
}

/// Pre-reform parallel-trend design: restrict to spells leaving their state
/// in `[sample_start, cutoff]`, drop the treatment block, and add
/// interactions of the ever-adopter indicator with the linear and quadratic
/// (optionally cubic) quarterly trends.
///
/// Returns the design plus the indices of the retained spells.
pub fn build_pretrend_design(
    spells: &[SpellRecord],
    spec: &ModelSpec,
    cutoff: f64,
    cubic: bool,
) -> Result<(Design, Vec<usize>)> {
    spec.validate()?;
    // The interaction-only test is conditional on the common time function:
    // without it, the treated-trend columns absorb trends shared by both
    // arms (window-edge censoring alone creates one) and the test is not a
    // test of *differential* trends.
    if !spec.covariates.quarterly_trends && !spec.covariates.year_dummies {
        return Err(Error::Design(
            "pre-trend design requires common time controls in the model \
             (quarterly_trends or year_dummies)"
                .into(),
        ));
    }
    let kept: Vec<usize> = spells
        .iter()
        .enumerate()
        .filter(|(_, s)| s.exit_day() >= spec.sample_start && s.exit_day() <= cutoff)
        .map(|(i, _)| i)
        .collect();
    if kept.is_empty() {
        return Err(Error::Design(format!(
            "no spells leave their state in the pre-reform window ending at day {cutoff}"
        )));
    }
    let window: Vec<SpellRecord> = kept.iter().map(|&i| spells[i].clone()).collect();
    if let Some(bad) = window.iter().find(|s| s.mc == 1) {
        return Err(Error::Design(format!(
            "pre-reform window contains a treated spell (patient {}, spell {})",
            bad.patient_id, bad.spell_index
        )));
    }
    if !window.iter().any(|s| s.adoption_day.is_some()) {
        return Err(Error::Design(
            "no later-adopting department observed in the pre-reform window".into(),
        ));
    }
    let mut pre_spec = spec.clone();
    pre_spec.covariates.mc = McMode::None;
    let mut schema = resolve_schema(&window, &pre_spec)?;
    schema.pretrend_block = vec![schema.columns.len(), schema.columns.len() + 1];
    schema.columns.push("pretrend_q".into());
    schema.columns.push("pretrend_q2".into());
    if cubic {
        schema.pretrend_block.push(schema.columns.len());
        schema.columns.push("pretrend_q3".into());
    }
    schema.pretrend_cubic = cubic;
    let rows = build_rows(&window, &pre_spec, &schema)?;
    Ok((Design { schema, rows }, kept))
}

/// Column-rank diagnostic of the stacked design (Gram-matrix eigenvalues).
#[derive(Debug, Clone, Serialize)]
pub struct RankReport {
    pub full_rank: bool,
    pub n_columns: usize,
    /// For each (near-)null direction, the columns loading on it.
    pub null_space: Vec<Vec<String>>,
}

pub fn rank_report(design: &Design) -> RankReport {
    let p = design.schema.columns.len();
    if p == 0 {
        return RankReport {
            full_rank: true,
            n_columns: 0,
            null_space: Vec::new(),
        };
    }
    let mut gram = nalgebra::DMatrix::<f64>::zeros(p, p);
    for row in &design.rows {
        for (a, &ia) in row.idx.iter().enumerate() {
            for (b, &ib) in row.idx.iter().enumerate().skip(a) {
                let v = row.val[a] * row.val[b];
                gram[(ia as usize, ib as usize)] += v;
                if ia != ib {
                    gram[(ib as usize, ia as usize)] += v;
                }
            }
        }
    }
    let eig = gram.symmetric_eigen();
    let max_eig = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let tol = max_eig * 1e-10 + 1e-300;
    let mut null_space = Vec::new();
    for (j, &ev) in eig.eigenvalues.iter().enumerate() {
        if ev <= tol {
            let v = eig.eigenvectors.column(j);
            let vmax = v.iter().cloned().map(f64::abs).fold(0.0f64, f64::max);
            let mut names: Vec<String> = Vec::new();
            for (i, &c) in v.iter().enumerate() {
                if c.abs() > 0.1 * vmax {
                    names.push(design.schema.columns[i].clone());
                }
            }
            null_space.push(names);
        }
    }
    RankReport {
        full_rank: null_space.is_empty(),
        n_columns: p,
        null_space,
    }
}
