//! Group alignment as discrete MRF energy minimization.
//!
//! Every site (a building group, or a single building) picks one integer
//! translation from a rectangular label set. The energy of a labelling is
//!
//! ```text
//! E(d) = sum_i -log C(d_i) + beta / Z * sum_{(i, j) in edges} |d_i - d_j|
//! ```
//!
//! where `C` is the mean probability under the shifted site mask and `Z` the
//! largest possible distance between two labels. The minimizer starts from
//! the per-site unary optimum and runs iterated conditional modes: sites are
//! visited in id order and each adopts the label with strictly lower
//! conditional energy `U(d | neighbours)`.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{shift, Displacement, Footprint, PixelRect, Source};
use crate::grouping::{
    build_graph, group_buildings, singleton_groups, BuildingGroup, GroupGraph,
    DEFAULT_KNN, DEFAULT_LINK_DISTANCE_M,
};
use crate::raster::{abs_difference, mean_prob, mutual_info, ProbMap, WindowStats};
use crate::scalar::Scalar;

/// Floor applied to the correlation before taking its logarithm.
pub const CORRELATION_FLOOR: f64 = 1e-6;

/// Rectangular set of candidate translations, bounds inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DisplacementDomain {
    pub min_dx: i32,
    pub max_dx: i32,
    pub min_dy: i32,
    pub max_dy: i32,
}

impl DisplacementDomain {
    pub fn new(min_dx: i32, max_dx: i32, min_dy: i32, max_dy: i32) -> Result<Self> {
        let domain = Self {
            min_dx,
            max_dx,
            min_dy,
            max_dy,
        };
        if min_dx > max_dx || min_dy > max_dy || !domain.contains(Displacement::ZERO) {
            return Err(Error::InvalidParameter(format!(
                "displacement domain [{min_dx}, {max_dx}] x [{min_dy}, {max_dy}] must contain (0, 0)"
            )));
        }
        Ok(domain)
    }

    /// `[-radius, radius]` on both axes.
    pub fn symmetric(radius: i32) -> Self {
        let r = radius.abs();
        Self {
            min_dx: -r,
            max_dx: r,
            min_dy: -r,
            max_dy: r,
        }
    }

    pub fn contains(&self, d: Displacement) -> bool {
        (self.min_dx..=self.max_dx).contains(&d.dx) && (self.min_dy..=self.max_dy).contains(&d.dy)
    }

    pub fn len(&self) -> usize {
        ((self.max_dx - self.min_dx + 1) * (self.max_dy - self.min_dy + 1)) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Largest absolute component of any label.
    pub fn reach(&self) -> i64 {
        [self.min_dx, self.max_dx, self.min_dy, self.max_dy]
            .iter()
            .map(|v| v.unsigned_abs() as i64)
            .max()
            .unwrap()
    }

    /// Maximum distance between two labels (the domain diagonal).
    pub fn diameter(&self) -> f64 {
        let w = (self.max_dx - self.min_dx) as f64;
        let h = (self.max_dy - self.min_dy) as f64;
        w.hypot(h)
    }

    /// All labels ordered by preference under ties: smaller norm, then (dx, dy).
    pub fn labels(&self) -> Vec<Displacement> {
        let mut labels: Vec<Displacement> = (self.min_dx..=self.max_dx)
            .flat_map(|dx| (self.min_dy..=self.max_dy).map(move |dy| Displacement::new(dx, dy)))
            .collect();
        labels.sort_by_key(|d| (d.norm_sq(), d.dx, d.dy));
        labels
    }
}

impl Default for DisplacementDomain {
    fn default() -> Self {
        Self::symmetric(30)
    }
}

/// Data term of the site energy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Unary {
    /// `-log` of the mean probability under the shifted mask.
    #[default]
    Correlation,
    /// Windowed sum of absolute mask/probability differences.
    AbsDifference,
    /// Negated windowed mutual information.
    MutualInfo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SiteMode {
    #[default]
    Groups,
    Buildings,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignConfig<T> {
    pub beta: T,
    pub max_iters: usize,
    pub domain: DisplacementDomain,
    pub unary: Unary,
    pub site_mode: SiteMode,
    pub link_distance_m: T,
    pub knn: usize,
}

impl<T: Scalar> Default for AlignConfig<T> {
    fn default() -> Self {
        Self {
            beta: T::lit(2.0),
            max_iters: 10,
            domain: DisplacementDomain::default(),
            unary: Unary::Correlation,
            site_mode: SiteMode::Groups,
            link_distance_m: T::lit(DEFAULT_LINK_DISTANCE_M),
            knn: DEFAULT_KNN,
        }
    }
}

impl<T: Scalar> AlignConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= T::zero() && self.beta.is_finite()) {
            return Err(Error::InvalidParameter(format!("beta {} must be >= 0", self.beta)));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be >= 1".into()));
        }
        if !(self.link_distance_m >= T::zero()) {
            return Err(Error::InvalidParameter("link distance must be >= 0".into()));
        }
        DisplacementDomain::new(
            self.domain.min_dx,
            self.domain.max_dx,
            self.domain.min_dy,
            self.domain.max_dy,
        )?;
        Ok(())
    }

    pub fn for_method(method: Method) -> Self {
        let base = Self::default();
        let (beta, unary, site_mode) = match method {
            Method::CorrBuildings => (T::zero(), Unary::Correlation, SiteMode::Buildings),
            Method::CorrGroups => (T::zero(), Unary::Correlation, SiteMode::Groups),
            Method::MrfBuildings => (base.beta, Unary::Correlation, SiteMode::Buildings),
            Method::MrfGroups => (base.beta, Unary::Correlation, SiteMode::Groups),
            Method::AbsDifference => (T::zero(), Unary::AbsDifference, SiteMode::Groups),
            Method::MutualInfo => (T::zero(), Unary::MutualInfo, SiteMode::Groups),
        };
        Self {
            beta,
            unary,
            site_mode,
            ..base
        }
    }
}

/// Named aligner variants: the MRF model and its ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    CorrBuildings,
    CorrGroups,
    MrfBuildings,
    MrfGroups,
    AbsDifference,
    MutualInfo,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentResult<T> {
    pub displacements: Vec<Displacement>,
    pub unary_values: Vec<T>,
    /// Energy of the final labelling, each undirected edge counted once.
    pub energy: T,
    /// Energy after initialization, then after every sweep.
    pub energy_trace: Vec<T>,
    pub iterations_run: usize,
    pub converged: bool,
}

/// Pixel window scored by the windowed unaries: the mask window grown by the domain reach.
pub fn site_window(site: &BuildingGroup<impl Scalar>, domain: &DisplacementDomain) -> PixelRect {
    site.union_mask.rect().dilate(domain.reach())
}

/// Data term of placing `site` at displacement `d`; lower is better.
pub fn unary_energy<T: Scalar>(
    site: &BuildingGroup<T>,
    d: Displacement,
    map: &ProbMap<T>,
    unary: Unary,
    domain: &DisplacementDomain,
) -> Result<T> {
    let moved = site.union_mask.translated(d);
    match unary {
        Unary::Correlation => Ok(neg_log_correlation(mean_prob(&moved, map)?)),
        Unary::AbsDifference => abs_difference(&moved, map, site_window(site, domain)),
        Unary::MutualInfo => Ok(-mutual_info(&moved, map, site_window(site, domain))?),
    }
}

fn neg_log_correlation<T: Scalar>(c: T) -> T {
    -c.max(T::lit(CORRELATION_FLOOR)).ln()
}

/// `beta * |d_i - d_j| / z`; zero when `z` is zero (single-label domain).
pub fn pairwise_energy<T: Scalar>(di: Displacement, dj: Displacement, beta: T, z: T) -> T {
    if z == T::zero() {
        return T::zero();
    }
    let dist = T::lit(Displacement::new(di.dx - dj.dx, di.dy - dj.dy).norm());
    beta * dist / z
}

/// Precomputed unary tables plus the graph: everything ICM needs.
pub struct AlignmentProblem<'a, T> {
    graph: &'a GroupGraph<T>,
    beta: T,
    z: T,
    max_iters: usize,
    domain: DisplacementDomain,
    labels: Vec<Displacement>,
    /// Maps row-major domain position to index in `labels`.
    label_index: Vec<usize>,
    /// `unary[site][label]`.
    unary: Vec<Vec<T>>,
}

impl<'a, T: Scalar> AlignmentProblem<'a, T> {
    pub fn new(graph: &'a GroupGraph<T>, map: &ProbMap<T>, config: &AlignConfig<T>) -> Result<Self> {
        config.validate()?;
        let domain = config.domain;
        let labels = domain.labels();
        let mut label_index = vec![0; labels.len()];
        let height = (domain.max_dy - domain.min_dy + 1) as usize;
        for (k, d) in labels.iter().enumerate() {
            let pos = (d.dx - domain.min_dx) as usize * height + (d.dy - domain.min_dy) as usize;
            label_index[pos] = k;
        }
        let integral = map.row_integral();
        let unary = graph
            .groups
            .par_iter()
            .map(|site| -> Result<Vec<T>> {
                let runs = site.union_mask.runs();
                let count = site.union_mask.count();
                if count == 0 {
                    return Err(Error::EmptyMask);
                }
                Ok(match config.unary {
                    Unary::Correlation => labels
                        .iter()
                        .map(|&d| neg_log_correlation(integral.runs_mean(&runs, count, d)))
                        .collect(),
                    Unary::AbsDifference => {
                        let stats = WindowStats::new(map, site_window(site, &domain))?;
                        labels
                            .iter()
                            .map(|&d| stats.abs_difference(&runs, &integral, d))
                            .collect()
                    }
                    Unary::MutualInfo => {
                        let stats = WindowStats::new(map, site_window(site, &domain))?;
                        labels
                            .iter()
                            .map(|&d| -stats.mutual_info(map, &runs, d))
                            .collect()
                    }
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            graph,
            beta: config.beta,
            z: T::lit(domain.diameter()),
            max_iters: config.max_iters,
            domain,
            labels,
            label_index,
            unary,
        })
    }

    pub fn labels(&self) -> &[Displacement] {
        &self.labels
    }

    pub fn normalizer(&self) -> T {
        self.z
    }

    fn index_of(&self, d: Displacement) -> usize {
        assert!(self.domain.contains(d), "displacement {d} outside domain");
        let height = (self.domain.max_dy - self.domain.min_dy + 1) as usize;
        let pos = (d.dx - self.domain.min_dx) as usize * height + (d.dy - self.domain.min_dy) as usize;
        self.label_index[pos]
    }

    pub fn unary(&self, site: usize, d: Displacement) -> T {
        self.unary[site][self.index_of(d)]
    }

    /// Conditional energy of `site` taking `d` with neighbours fixed at `current`.
    pub fn site_energy(&self, site: usize, d: Displacement, current: &[Displacement]) -> T {
        self.site_energy_at(site, self.index_of(d), current)
    }

    fn site_energy_at(&self, site: usize, label: usize, current: &[Displacement]) -> T {
        let d = self.labels[label];
        let mut e = self.unary[site][label];
        if self.beta > T::zero() {
            for &j in &self.graph.neighbors[site] {
                e = e + pairwise_energy(d, current[j], self.beta, self.z);
            }
        }
        e
    }

    /// Total energy with each undirected edge counted once.
    pub fn total_energy(&self, current: &[Displacement]) -> T {
        let mut e = T::zero();
        for (i, &d) in current.iter().enumerate() {
            e = e + self.unary(i, d);
            for &j in &self.graph.neighbors[i] {
                if j > i {
                    e = e + pairwise_energy(d, current[j], self.beta, self.z);
                }
            }
        }
        e
    }

    /// Per-site unary optimum, ties resolved by label preference order.
    pub fn initialize(&self) -> Vec<Displacement> {
        self.unary
            .iter()
            .map(|row| {
                let mut best = 0;
                for (k, &e) in row.iter().enumerate() {
                    if e < row[best] {
                        best = k;
                    }
                }
                self.labels[best]
            })
            .collect()
    }

    /// Best label for one site given its neighbours; keeps `current[site]` unless strictly beaten.
    pub fn best_move(&self, site: usize, current: &[Displacement]) -> (Displacement, T) {
        let mut best = self.index_of(current[site]);
        let mut best_e = self.site_energy_at(site, best, current);
        for k in 0..self.labels.len() {
            let e = self.site_energy_at(site, k, current);
            if e < best_e {
                best = k;
                best_e = e;
            }
        }
        (self.labels[best], best_e)
    }

    pub fn icm(&self, init: Vec<Displacement>) -> AlignmentResult<T> {
        assert_eq!(init.len(), self.graph.len());
        let mut current = init;
        let mut trace = vec![self.total_energy(&current)];
        let mut iterations_run = 0;
        let mut converged = false;
        for sweep in 1..=self.max_iters {
            let mut changes = 0;
            for site in 0..current.len() {
                let (d, _) = self.best_move(site, &current);
                if d != current[site] {
                    current[site] = d;
                    changes += 1;
                }
            }
            iterations_run = sweep;
            trace.push(self.total_energy(&current));
            if changes == 0 {
                converged = true;
                break;
            }
        }
        AlignmentResult {
            unary_values: current
                .iter()
                .enumerate()
                .map(|(i, &d)| self.unary(i, d))
                .collect(),
            energy: *trace.last().unwrap(),
            energy_trace: trace,
            displacements: current,
            iterations_run,
            converged,
        }
    }
}

/// Per-site argmin of the unary term.
pub fn init_alignment<T: Scalar>(
    graph: &GroupGraph<T>,
    map: &ProbMap<T>,
    config: &AlignConfig<T>,
) -> Result<Vec<Displacement>> {
    Ok(AlignmentProblem::new(graph, map, config)?.initialize())
}

/// Initialization followed by ICM sweeps.
pub fn icm_align<T: Scalar>(
    graph: &GroupGraph<T>,
    map: &ProbMap<T>,
    config: &AlignConfig<T>,
) -> Result<AlignmentResult<T>> {
    let problem = AlignmentProblem::new(graph, map, config)?;
    let init = problem.initialize();
    Ok(problem.icm(init))
}

/// Shifts every footprint by its group's displacement and marks it aligned.
pub fn apply_alignment<T: Scalar>(
    footprints: &[Footprint<T>],
    groups: &[BuildingGroup<T>],
    result: &AlignmentResult<T>,
) -> Result<Vec<Footprint<T>>> {
    if groups.len() != result.displacements.len() {
        return Err(Error::InconsistentState(format!(
            "{} groups but {} displacements",
            groups.len(),
            result.displacements.len()
        )));
    }
    let mut group_of: HashMap<&str, usize> = HashMap::new();
    for g in groups {
        for id in &g.member_ids {
            group_of.insert(id.as_str(), g.id);
        }
    }
    footprints
        .iter()
        .map(|fp| {
            let g = *group_of.get(fp.id.as_str()).ok_or_else(|| {
                Error::InconsistentState(format!("footprint {:?} belongs to no group", fp.id))
            })?;
            let d = *result.displacements.get(g).ok_or_else(|| {
                Error::InconsistentState(format!("group {g} has no displacement"))
            })?;
            Ok(Footprint {
                polygon: shift(&fp.polygon, d),
                source: Source::Aligned,
                ..fp.clone()
            })
        })
        .collect()
}

/// Sites, graph, solution and the shifted footprints of one alignment run.
#[derive(Debug, Clone)]
pub struct Alignment<T> {
    pub graph: GroupGraph<T>,
    pub result: AlignmentResult<T>,
    pub aligned: Vec<Footprint<T>>,
}

/// Groups (or isolates) the footprints, builds the site graph and aligns.
pub fn align_footprints<T: Scalar>(
    footprints: &[Footprint<T>],
    map: &ProbMap<T>,
    config: &AlignConfig<T>,
) -> Result<Alignment<T>> {
    config.validate()?;
    let groups = match config.site_mode {
        SiteMode::Groups => group_buildings(footprints, map.resolution(), config.link_distance_m)?,
        SiteMode::Buildings => singleton_groups(footprints)?,
    };
    let graph = build_graph(groups, config.knn);
    let result = icm_align(&graph, map, config)?;
    let aligned = apply_alignment(footprints, &graph.groups, &result)?;
    Ok(Alignment {
        graph,
        result,
        aligned,
    })
}
