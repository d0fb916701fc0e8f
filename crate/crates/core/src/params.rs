//! The flat parameter vector and its mapping onto the stacked matrices.
//!
//! Every model cell that can be nonzero is a [`ParameterEntry`]. Entries are
//! free, fixed, or members of a cross-wave equality class; free entries and
//! classes each own one slot of the free-parameter vector. The invariance
//! ladder is nothing more than which classes get formed.

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{AsmError, Result};
use crate::matrices::AssembledMatrices;
use crate::moments::SampleMoments;
use crate::spec::{Identification, InvarianceLevel, LatentMeans, ModelSpec, ParamRef};

/// Which stacked matrix an entry lives in. Declaration order is table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Matrix {
    Mu,
    Lambda,
    Beta,
    Pi,
    C,
    Psi,
    Theta,
    Alpha,
}

impl Matrix {
    pub fn name(self) -> &'static str {
        match self {
            Matrix::Mu => "mu",
            Matrix::Lambda => "lambda",
            Matrix::Beta => "beta",
            Matrix::Pi => "pi",
            Matrix::C => "c",
            Matrix::Psi => "psi",
            Matrix::Theta => "theta",
            Matrix::Alpha => "alpha",
        }
    }

    /// Regression-type coefficients living in `gamma`.
    pub fn is_structural(self) -> bool {
        matches!(self, Matrix::Beta | Matrix::Pi | Matrix::C)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Status {
    Free,
    Fixed(f64),
    /// Member of a cross-wave equality class.
    Equal(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterEntry {
    pub id: usize,
    pub target: Matrix,
    pub param: ParamRef,
    /// Wave of the cell (target wave for autoregressive paths); `None` for covariate cells.
    pub wave: Option<usize>,
    /// Source wave of an autoregressive path.
    pub source_wave: Option<usize>,
    pub row: usize,
    pub col: usize,
    pub status: Status,
    /// Free-parameter slot; `None` when fixed.
    pub slot: Option<usize>,
    pub start: f64,
}

/// Index arithmetic for the stacked observed and latent vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub indicators: usize,
    pub latents: usize,
    pub covariates: usize,
    pub waves: usize,
    /// Latents in structural order.
    pub order: Vec<usize>,
    rank: Vec<usize>,
    owner: Vec<usize>,
}

/// What a row of the stacked latent vector stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatentRef {
    Covariate(usize),
    Template { latent: usize, wave: usize },
}

impl Layout {
    pub fn new(spec: &ModelSpec) -> Result<Self> {
        let order = spec.topological_order().map_err(|cycle| {
            let names: Vec<&str> = cycle.iter().map(|&l| spec.latents[l].as_str()).collect();
            AsmError::Identification(format!("structural paths form a cycle: {}", names.join(" -> ")))
        })?;
        let mut rank = vec![0; order.len()];
        for (r, &l) in order.iter().enumerate() {
            rank[l] = r;
        }
        Ok(Layout {
            indicators: spec.indicator_count(),
            latents: spec.latent_count(),
            covariates: spec.covariates.len(),
            waves: spec.waves,
            order,
            rank,
            owner: spec.indicator_list().iter().map(|(l, _)| *l).collect(),
        })
    }

    pub fn observed_dim(&self) -> usize {
        self.indicators * self.waves + self.covariates
    }

    pub fn latent_dim(&self) -> usize {
        self.covariates + self.latents * self.waves
    }

    /// Observed row of indicator `ind` at 1-based `wave`.
    pub fn obs(&self, wave: usize, ind: usize) -> usize {
        (wave - 1) * self.indicators + ind
    }

    pub fn covariate_obs(&self, cov: usize) -> usize {
        self.indicators * self.waves + cov
    }

    /// Latent row of template latent `latent` at 1-based `wave`.
    pub fn lat(&self, wave: usize, latent: usize) -> usize {
        self.covariates + (wave - 1) * self.latents + self.rank[latent]
    }

    pub fn describe_latent(&self, row: usize) -> LatentRef {
        if row < self.covariates {
            LatentRef::Covariate(row)
        } else {
            let k = row - self.covariates;
            LatentRef::Template {
                latent: self.order[k % self.latents],
                wave: k / self.latents + 1,
            }
        }
    }

    /// Owning latent of an observed indicator row; `None` for covariate columns.
    pub fn observed_owner(&self, row: usize) -> Option<(usize, usize, usize)> {
        if row >= self.indicators * self.waves {
            return None;
        }
        let ind = row % self.indicators;
        Some((self.owner[ind], ind, row / self.indicators + 1))
    }
}

#[derive(Debug, Clone)]
pub struct ParameterTable {
    pub entries: Vec<ParameterEntry>,
    pub free_count: usize,
    pub spec: ModelSpec,
    pub level: InvarianceLevel,
    pub layout: Layout,
    /// Entry ids per slot.
    slot_members: Vec<Vec<usize>>,
}

/// Expand a spec into its parameter table at the given invariance level.
///
/// Weak adds one cross-wave class per non-fixed loading; strong adds one per
/// non-exempt intercept on top. User fixes are applied last: fixing any member
/// of a class fixes the whole class, and two different fixed values in one
/// class are a conflict.
pub fn build_parameter_table(spec: &ModelSpec, level: InvarianceLevel) -> Result<ParameterTable> {
    let layout = Layout::new(spec)?;
    let inds = spec.indicator_list();
    let t_max = spec.waves;

    let loadings_equal = |l: usize| {
        level >= InvarianceLevel::Weak
            && !(spec.invariance.level == InvarianceLevel::Weak && spec.invariance.exempt.contains(&l))
    };
    let intercepts_equal = |l: usize| {
        level == InvarianceLevel::Strong
            && !(spec.invariance.level == InvarianceLevel::Strong && spec.invariance.exempt.contains(&l))
    };
    let first_indicator = |l: usize| inds.iter().position(|(o, _)| *o == l);

    let mut entries = Vec::new();
    let mut push = |target, param, wave, source_wave, row, col, status, start| {
        entries.push(ParameterEntry {
            id: 0,
            target,
            param,
            wave,
            source_wave,
            row,
            col,
            status,
            slot: None,
            start,
        })
    };

    for t in 1..=t_max {
        for i in 0..inds.len() {
            let r = layout.obs(t, i);
            push(
                Matrix::Mu,
                ParamRef::Intercept { indicator: i },
                Some(t),
                None,
                r,
                0,
                Status::Free,
                0.0,
            );
            let owner = inds[i].0;
            let status = if spec.identification == Identification::Marker && first_indicator(owner) == Some(i) {
                Status::Fixed(1.0)
            } else {
                Status::Free
            };
            push(
                Matrix::Lambda,
                ParamRef::Loading { indicator: i },
                Some(t),
                None,
                r,
                layout.lat(t, owner),
                status,
                1.0,
            );
            push(
                Matrix::Theta,
                ParamRef::Residual { indicator: i },
                Some(t),
                None,
                r,
                r,
                Status::Free,
                0.5,
            );
        }
        for &(src, dst) in &spec.structural_edges {
            push(
                Matrix::Beta,
                ParamRef::Path {
                    source: src,
                    target: dst,
                },
                Some(t),
                None,
                layout.lat(t, dst),
                layout.lat(t, src),
                Status::Free,
                0.0,
            );
        }
        for lag in 1..=spec.ar_order.min(t - 1) {
            for l in 0..spec.latent_count() {
                push(
                    Matrix::Pi,
                    ParamRef::Autoregressive { latent: l, lag },
                    Some(t),
                    Some(t - lag),
                    layout.lat(t, l),
                    layout.lat(t - lag, l),
                    Status::Free,
                    0.0,
                );
            }
        }
        for (j, cov) in spec.covariates.iter().enumerate() {
            for &l in &cov.targets {
                push(
                    Matrix::C,
                    ParamRef::CovariateEffect {
                        covariate: j,
                        latent: l,
                    },
                    Some(t),
                    None,
                    layout.lat(t, l),
                    j,
                    Status::Free,
                    0.0,
                );
            }
        }
        for l in 0..spec.latent_count() {
            let r = layout.lat(t, l);
            let status = if spec.identification == Identification::Variance && (t == 1 || !loadings_equal(l)) {
                Status::Fixed(1.0)
            } else {
                Status::Free
            };
            push(
                Matrix::Psi,
                ParamRef::Disturbance { latent: l },
                Some(t),
                None,
                r,
                r,
                status,
                1.0,
            );
            let status = if t >= 2
                && level == InvarianceLevel::Strong
                && spec.latent_means == LatentMeans::Free
                && intercepts_equal(l)
            {
                Status::Free
            } else {
                Status::Fixed(0.0)
            };
            push(
                Matrix::Alpha,
                ParamRef::LatentMean { latent: l },
                Some(t),
                None,
                r,
                0,
                status,
                0.0,
            );
        }
    }
    for j in 0..spec.covariates.len() {
        let r = layout.covariate_obs(j);
        push(
            Matrix::Mu,
            ParamRef::CovariateMean { covariate: j },
            None,
            None,
            r,
            0,
            Status::Free,
            0.0,
        );
        push(
            Matrix::Lambda,
            ParamRef::CovariateLoading { covariate: j },
            None,
            None,
            r,
            j,
            Status::Fixed(1.0),
            1.0,
        );
        for k in 0..=j {
            let start = if j == k { 1.0 } else { 0.0 };
            push(
                Matrix::Psi,
                ParamRef::CovariateCov { a: j, b: k },
                None,
                None,
                j,
                k,
                Status::Free,
                start,
            );
        }
    }

    // Cross-wave equality classes.
    let mut class_of: HashMap<(Matrix, usize), usize> = HashMap::new();
    let mut classes = 0;
    if t_max >= 2 {
        for e in entries.iter_mut() {
            let (key, equal) = match (e.target, e.param) {
                (Matrix::Lambda, ParamRef::Loading { indicator }) => {
                    ((Matrix::Lambda, indicator), loadings_equal(inds[indicator].0))
                }
                (Matrix::Mu, ParamRef::Intercept { indicator }) => {
                    ((Matrix::Mu, indicator), intercepts_equal(inds[indicator].0))
                }
                _ => continue,
            };
            if equal && e.status == Status::Free {
                let c = *class_of.entry(key).or_insert_with(|| {
                    classes += 1;
                    classes - 1
                });
                e.status = Status::Equal(c);
            }
        }
    }

    // User fixes. Fixing any member of a class pins the whole class.
    let member_class: Vec<Option<usize>> = entries
        .iter()
        .map(|e| match e.status {
            Status::Equal(c) => Some(c),
            _ => None,
        })
        .collect();
    let mut class_fixed: HashMap<usize, f64> = HashMap::new();
    for fix in &spec.fixed_values {
        let mut hit = false;
        for (k, e) in entries.iter_mut().enumerate() {
            if e.param != fix.param || !e.wave.is_none_or(|w| fix.wave.covers(w)) {
                continue;
            }
            hit = true;
            e.status = Status::Fixed(fix.value);
            if let Some(c) = member_class[k] {
                match class_fixed.get(&c) {
                    Some(&prev) if prev != fix.value => {
                        return Err(AsmError::FixedConflict {
                            label: spec.param_text(&fix.param),
                            first: prev,
                            second: fix.value,
                        })
                    }
                    _ => {
                        class_fixed.insert(c, fix.value);
                    }
                }
            }
        }
        if !hit {
            return Err(AsmError::Invalid(format!(
                "fixed parameter `{}` matches no model cell",
                spec.param_text(&fix.param)
            )));
        }
    }
    for e in entries.iter_mut() {
        if let Status::Equal(c) = e.status {
            if let Some(&v) = class_fixed.get(&c) {
                e.status = Status::Fixed(v);
            }
        }
    }

    entries.sort_by(|a, b| (a.target, a.wave, a.row, a.col).cmp(&(b.target, b.wave, b.row, b.col)));
    for (id, e) in entries.iter_mut().enumerate() {
        e.id = id;
    }

    let mut slot_members: Vec<Vec<usize>> = Vec::new();
    let mut class_slot: HashMap<usize, usize> = HashMap::new();
    for e in entries.iter_mut() {
        e.slot = match e.status {
            Status::Fixed(v) => {
                e.start = v;
                None
            }
            Status::Free => {
                slot_members.push(vec![e.id]);
                Some(slot_members.len() - 1)
            }
            Status::Equal(c) => {
                let s = *class_slot.entry(c).or_insert_with(|| {
                    slot_members.push(Vec::new());
                    slot_members.len() - 1
                });
                slot_members[s].push(e.id);
                Some(s)
            }
        };
    }

    Ok(ParameterTable {
        free_count: slot_members.len(),
        entries,
        spec: spec.clone(),
        level,
        layout,
        slot_members,
    })
}

/// Number of free slots after equality classes collapse.
pub fn count_free_parameters(table: &ParameterTable) -> usize {
    table.free_count
}

/// Fill the stacked matrices from a free-parameter vector.
pub fn theta_to_matrices(table: &ParameterTable, theta: &[f64]) -> Result<AssembledMatrices> {
    if theta.len() != table.free_count {
        return Err(AsmError::Dimension {
            what: "free-parameter vector",
            expected: table.free_count,
            found: theta.len(),
        });
    }
    let mut m = AssembledMatrices::zeros(table.layout.observed_dim(), table.layout.latent_dim());
    for e in &table.entries {
        let v = table.value(e, theta);
        let (r, c) = (e.row, e.col);
        match e.target {
            Matrix::Mu => m.mu[r] = v,
            Matrix::Alpha => m.alpha[r] = v,
            Matrix::Lambda => m.lambda[(r, c)] = v,
            Matrix::Beta | Matrix::Pi | Matrix::C => m.gamma[(r, c)] = v,
            Matrix::Psi => {
                m.psi[(r, c)] = v;
                m.psi[(c, r)] = v;
            }
            Matrix::Theta => {
                m.theta[(r, c)] = v;
                m.theta[(c, r)] = v;
            }
        }
    }
    Ok(m)
}

impl ParameterTable {
    pub fn value(&self, e: &ParameterEntry, theta: &[f64]) -> f64 {
        match (e.status, e.slot) {
            (Status::Fixed(v), _) => v,
            (_, Some(s)) => theta[s],
            _ => unreachable!("non-fixed entries own a slot"),
        }
    }

    /// Entry ids sharing each free slot.
    pub fn slot_members(&self, slot: usize) -> &[usize] {
        &self.slot_members[slot]
    }

    /// True when intercepts are restricted or latent means estimated, so the
    /// means carry information beyond the saturated `mu = ybar`.
    pub fn mean_structure_active(&self) -> bool {
        self.entries.iter().any(|e| match e.target {
            Matrix::Mu => e.status != Status::Free,
            Matrix::Alpha => e.slot.is_some(),
            _ => false,
        })
    }

    /// Slots that are unconstrained intercepts.
    pub fn intercept_slots(&self) -> Vec<usize> {
        self.entries
            .iter()
            .filter(|e| e.target == Matrix::Mu && e.status == Status::Free)
            .filter_map(|e| e.slot)
            .collect()
    }

    /// Data-driven starting values: intercepts at the sample means, loadings
    /// at 1, residual variances at half the observed variance, disturbance
    /// variances at half the marker indicator's variance, the covariate block
    /// at its sample covariance, and all regressions at 0.
    pub fn set_starts(&mut self, moments: &SampleMoments) {
        let s = &moments.cov;
        let inds = self.spec.indicator_list();
        for e in self.entries.iter_mut() {
            if let Status::Fixed(v) = e.status {
                e.start = v;
                continue;
            }
            e.start = match (e.target, e.param) {
                (Matrix::Mu, _) => moments.mean[e.row],
                (Matrix::Theta, _) => 0.5 * s[(e.row, e.row)],
                (Matrix::Psi, ParamRef::CovariateCov { a, b }) => {
                    let (ra, rb) = (self.layout.covariate_obs(a), self.layout.covariate_obs(b));
                    s[(ra, rb)]
                }
                (Matrix::Psi, ParamRef::Disturbance { latent }) => match inds.iter().position(|(o, _)| *o == latent) {
                    Some(i) => {
                        let r = self.layout.obs(e.wave.unwrap(), i);
                        0.5 * s[(r, r)]
                    }
                    None => 1.0,
                },
                (Matrix::Lambda, _) => 1.0,
                _ => 0.0,
            };
        }
    }

    /// Starting vector: each slot at the mean of its members' starts.
    pub fn start_theta(&self) -> Vec<f64> {
        self.slot_members
            .iter()
            .map(|ids| ids.iter().map(|&i| self.entries[i].start).sum::<f64>() / ids.len() as f64)
            .collect()
    }

    /// Free vector whose slots read their first member's cell in `m`.
    pub fn theta_from_matrices(&self, m: &AssembledMatrices) -> Vec<f64> {
        self.slot_members
            .iter()
            .map(|ids| {
                let e = &self.entries[ids[0]];
                match e.target {
                    Matrix::Mu => m.mu[e.row],
                    Matrix::Alpha => m.alpha[e.row],
                    Matrix::Lambda => m.lambda[(e.row, e.col)],
                    Matrix::Beta | Matrix::Pi | Matrix::C => m.gamma[(e.row, e.col)],
                    Matrix::Psi => m.psi[(e.row, e.col)],
                    Matrix::Theta => m.theta[(e.row, e.col)],
                }
            })
            .collect()
    }

    /// Label in `fix` syntax with a wave suffix, e.g. `beta[SA,FHS]@1`.
    pub fn label(&self, e: &ParameterEntry) -> String {
        let base = self.spec.param_text(&e.param);
        match e.wave {
            Some(t) => format!("{base}@{t}"),
            None => base,
        }
    }

    /// Human-readable path such as `SA_1 -> FHS_1`.
    pub fn path(&self, e: &ParameterEntry) -> String {
        let spec = &self.spec;
        let lat = |l: usize, t: usize| format!("{}_{}", spec.latents[l], t);
        let inds = spec.indicator_list();
        let obs = |i: usize, t: usize| format!("{}.{}", inds[i].1, t);
        let t = e.wave.unwrap_or(0);
        match e.param {
            ParamRef::Intercept { indicator } => format!("1 -> {}", obs(indicator, t)),
            ParamRef::CovariateMean { covariate } => format!("1 -> {}", spec.covariates[covariate].name),
            ParamRef::Loading { indicator } => {
                format!("{} -> {}", lat(inds[indicator].0, t), obs(indicator, t))
            }
            ParamRef::CovariateLoading { covariate } => {
                let n = &spec.covariates[covariate].name;
                format!("{n} -> {n}")
            }
            ParamRef::Path { source, target } => format!("{} -> {}", lat(source, t), lat(target, t)),
            ParamRef::Autoregressive { latent, .. } => {
                format!("{} -> {}", lat(latent, e.source_wave.unwrap()), lat(latent, t))
            }
            ParamRef::CovariateEffect { covariate, latent } => {
                format!("{} -> {}", spec.covariates[covariate].name, lat(latent, t))
            }
            ParamRef::Disturbance { latent } => format!("{0} <-> {0}", lat(latent, t)),
            ParamRef::CovariateCov { a, b } => format!("{} <-> {}", spec.covariates[a].name, spec.covariates[b].name),
            ParamRef::Residual { indicator } => format!("{0} <-> {0}", obs(indicator, t)),
            ParamRef::LatentMean { latent } => format!("1 -> {}", lat(latent, t)),
        }
    }

    /// Entry lookup by label.
    pub fn find(&self, label: &str) -> Option<&ParameterEntry> {
        self.entries.iter().find(|e| self.label(e) == label)
    }

    /// Audit dump, one row per entry.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("id\tmatrix\tlabel\tpath\twave\trow\tcol\tstatus\tslot\tstart\n");
        for e in &self.entries {
            let status = match e.status {
                Status::Free => "free".to_string(),
                Status::Fixed(v) => format!("fixed({v})"),
                Status::Equal(c) => format!("equal({c})"),
            };
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                e.id,
                e.target.name(),
                self.label(e),
                self.path(e),
                e.wave.map_or("-".into(), |w| w.to_string()),
                e.row,
                e.col,
                status,
                e.slot.map_or("-".into(), |s| s.to_string()),
                e.start
            );
        }
        out
    }
}

/// Dense dump of one matrix as TSV.
pub fn matrix_tsv(name: &str, m: &DMatrix<f64>) -> String {
    let mut out = format!("# {name} {}x{}\n", m.nrows(), m.ncols());
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| format!("{}", m[(r, c)])).collect();
        out.push_str(&row.join("\t"));
        out.push('\n');
    }
    out
}

/// All assembled matrices as consecutive TSV blocks.
pub fn matrices_tsv(m: &AssembledMatrices) -> String {
    let col = |v: &DVector<f64>| DMatrix::from_column_slice(v.len(), 1, v.as_slice());
    [
        matrix_tsv("mu", &col(&m.mu)),
        matrix_tsv("lambda", &m.lambda),
        matrix_tsv("gamma", &m.gamma),
        matrix_tsv("psi", &m.psi),
        matrix_tsv("theta", &m.theta),
        matrix_tsv("alpha", &col(&m.alpha)),
    ]
    .join("")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::parse_model_spec;

    fn table(text: &str, level: InvarianceLevel) -> ParameterTable {
        build_parameter_table(&parse_model_spec(text).unwrap(), level).unwrap()
    }

    #[test]
    fn single_wave_has_no_classes() {
        for level in [
            InvarianceLevel::Configural,
            InvarianceLevel::Weak,
            InvarianceLevel::Strong,
        ] {
            let t = table("latent F by a b c\nwaves 1", level);
            assert!(t.entries.iter().all(|e| !matches!(e.status, Status::Equal(_))));
            // 3 mu, 2 loadings, 3 theta, 1 psi
            assert_eq!(count_free_parameters(&t), 9);
        }
    }

    #[test]
    fn all_fixed_table() {
        let t = table(
            "latent F by a\nwaves 1\nfix mu[a] = 0.5\nfix theta[a] = 0.2\nfix psi[F] = 2",
            InvarianceLevel::Configural,
        );
        assert_eq!(count_free_parameters(&t), 0);
        let m = theta_to_matrices(&t, &[]).unwrap();
        assert_eq!(m.mu[0], 0.5);
        assert_eq!(m.lambda[(0, 0)], 1.0);
        assert_eq!(m.theta[(0, 0)], 0.2);
        assert_eq!(m.psi[(0, 0)], 2.0);
        assert!(theta_to_matrices(&t, &[1.0]).is_err());
    }

    #[test]
    fn weak_loadings_share_a_slot() {
        let t = table("latent F by a b c\nwaves 3", InvarianceLevel::Weak);
        let slots: Vec<_> = ["lambda[F,c]@1", "lambda[F,c]@2", "lambda[F,c]@3"]
            .iter()
            .map(|l| t.find(l).unwrap().slot.unwrap())
            .collect();
        assert!(slots.iter().all(|&s| s == slots[0]));
        let mut theta = t.start_theta();
        theta[slots[0]] = 0.348;
        let m = theta_to_matrices(&t, &theta).unwrap();
        for w in 1..=3 {
            let e = t.find(&format!("lambda[F,c]@{w}")).unwrap();
            assert_eq!(m.lambda[(e.row, e.col)], 0.348);
        }
    }

    #[test]
    fn perturbing_a_slot_changes_exactly_its_cells() {
        let t = table(
            "latent F by a b\nlatent G by c d\npath F -> G\ncovariate X -> F G\nwaves 3\nar 2",
            InvarianceLevel::Weak,
        );
        let base = t.start_theta();
        let m0 = theta_to_matrices(&t, &base).unwrap();
        for s in 0..t.free_count {
            let mut th = base.clone();
            th[s] += 0.25;
            let m1 = theta_to_matrices(&t, &th).unwrap();
            let mut changed = Vec::new();
            let mut diff = |name: &str, a: &DMatrix<f64>, b: &DMatrix<f64>| {
                for r in 0..a.nrows() {
                    for c in 0..a.ncols() {
                        if a[(r, c)] != b[(r, c)] {
                            changed.push((name.to_string(), r, c));
                        }
                    }
                }
            };
            let col = |v: &DVector<f64>| DMatrix::from_column_slice(v.len(), 1, v.as_slice());
            diff("mu", &col(&m0.mu), &col(&m1.mu));
            diff("alpha", &col(&m0.alpha), &col(&m1.alpha));
            diff("lambda", &m0.lambda, &m1.lambda);
            diff("gamma", &m0.gamma, &m1.gamma);
            diff("psi", &m0.psi, &m1.psi);
            diff("theta", &m0.theta, &m1.theta);
            let mut expected = Vec::new();
            for &id in t.slot_members(s) {
                let e = &t.entries[id];
                let name = match e.target {
                    Matrix::Mu => "mu",
                    Matrix::Alpha => "alpha",
                    Matrix::Lambda => "lambda",
                    Matrix::Beta | Matrix::Pi | Matrix::C => "gamma",
                    Matrix::Psi => "psi",
                    Matrix::Theta => "theta",
                };
                expected.push((name.to_string(), e.row, e.col));
                if matches!(e.target, Matrix::Psi | Matrix::Theta) && e.row != e.col {
                    expected.push((name.to_string(), e.col, e.row));
                }
            }
            changed.sort();
            expected.sort();
            assert_eq!(changed, expected, "slot {s}");
        }
    }

    #[test]
    fn ladder_is_monotone() {
        let text = "latent F by a b c\nlatent G by d e\npath F -> G\nwaves 3\nar 1\ninvariance strong";
        let counts: Vec<usize> = [
            InvarianceLevel::Configural,
            InvarianceLevel::Weak,
            InvarianceLevel::Strong,
        ]
        .iter()
        .map(|&l| table(text, l).free_count)
        .collect();
        // 3 non-marker loadings x 2 waves, then 5 intercepts x 2 waves
        assert_eq!(counts[0] - counts[1], 6);
        assert_eq!(counts[1] - counts[2], 10);
    }

    #[test]
    fn fixing_a_class_member_fixes_the_class() {
        let t = table(
            "latent F by a b\nwaves 2\nfix lambda[F,b]@1 = 0.7",
            InvarianceLevel::Weak,
        );
        assert_eq!(t.find("lambda[F,b]@2").unwrap().status, Status::Fixed(0.7));

        let err = build_parameter_table(
            &parse_model_spec("latent F by a b\nwaves 2\nfix lambda[F,b]@1 = 0.7\nfix lambda[F,b]@2 = 0.8").unwrap(),
            InvarianceLevel::Weak,
        )
        .unwrap_err();
        assert!(matches!(err, AsmError::FixedConflict { .. }), "{err}");

        // Same fixes are fine when loadings are not equated.
        build_parameter_table(
            &parse_model_spec("latent F by a b\nwaves 2\nfix lambda[F,b]@1 = 0.7\nfix lambda[F,b]@2 = 0.8").unwrap(),
            InvarianceLevel::Configural,
        )
        .unwrap();
    }

    #[test]
    fn entries_are_sorted_and_variances_start_positive() {
        let t = table(
            "latent F by a b\nlatent G by c d\npath F -> G\ncovariate X -> G\nwaves 2",
            InvarianceLevel::Strong,
        );
        for w in t.entries.windows(2) {
            assert!((w[0].target, w[0].wave, w[0].row, w[0].col) < (w[1].target, w[1].wave, w[1].row, w[1].col));
        }
        for e in &t.entries {
            if e.slot.is_some() && matches!(e.target, Matrix::Psi | Matrix::Theta) && e.row == e.col {
                assert!(e.start > 0.0);
            }
        }
        let m = theta_to_matrices(&t, &t.start_theta()).unwrap();
        crate::matrices::check_triangular(&m.gamma).unwrap();
    }

    #[test]
    fn latent_means_free_under_strong() {
        let t = table(
            "latent F by a b\nwaves 3\ninvariance strong\nmeans free",
            InvarianceLevel::Strong,
        );
        assert!(t.find("alpha[F]@1").unwrap().slot.is_none());
        assert!(t.find("alpha[F]@2").unwrap().slot.is_some());
        assert!(t.mean_structure_active());
        let weak = table(
            "latent F by a b\nwaves 3\ninvariance strong\nmeans free",
            InvarianceLevel::Weak,
        );
        assert!(!weak.mean_structure_active());
    }

    #[test]
    fn variance_identification() {
        let t = table("latent F by a b\nwaves 2\nidentify variance", InvarianceLevel::Weak);
        assert_eq!(t.find("psi[F]@1").unwrap().status, Status::Fixed(1.0));
        assert!(t.find("psi[F]@2").unwrap().slot.is_some());
        assert!(t.find("lambda[F,a]@1").unwrap().slot.is_some());
        let c = table(
            "latent F by a b\nwaves 2\nidentify variance",
            InvarianceLevel::Configural,
        );
        assert_eq!(c.find("psi[F]@2").unwrap().status, Status::Fixed(1.0));
    }
}
