//! Dictionary parameterizations and their materialization into convolution kernels.
//!
//! A dense dictionary stores `p` spectral atoms of length `c` and acts on 1x1
//! patches. A low-rank dictionary stores, for every atom `j`, a spatial factor
//! `U_j` (`s^2 x r`) and a spectral factor `V_j` (`r x c`); the atom is
//! `vec(U_j V_j)`, so each dictionary costs `(s^2 + c) r p` parameters instead
//! of `c s^2 p`.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Graph, Parameter};
use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::{Real, Tensor};

/// Which matrix of an unrolled layer a dictionary plays.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    /// `C`, applied to residuals inside the iterations.
    Analysis,
    /// `D`, used to form the current reconstruction.
    Synthesis,
    /// `W`, used once to decode the final codes.
    Decode,
}

impl Role {
    pub fn letter(self) -> &'static str {
        match self {
            Role::Analysis => "C",
            Role::Synthesis => "D",
            Role::Decode => "W",
        }
    }
}

fn he_normal<T: Real>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    Tensor::from_fn(shape, |_| T::lit(normal.sample(rng)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseDictionary<T> {
    /// `[p, c]`
    pub atoms: Parameter<T>,
    pub role: Role,
}

impl<T: Real> DenseDictionary<T> {
    pub fn new(name: impl Into<String>, atoms: Tensor<T>, role: Role) -> Result<Self> {
        if atoms.ndim() != 2 || atoms.numel() == 0 {
            return Err(Error::Domain(format!(
                "dense dictionary needs a non-empty [p, c] matrix, got {:?}",
                atoms.shape()
            )));
        }
        Ok(DenseDictionary {
            atoms: Parameter::new(name, atoms),
            role,
        })
    }

    /// He-initialized atoms, `fan_in = c` (the spatial extent is 1).
    pub fn init_he(
        name: impl Into<String>,
        atoms: usize,
        channels: usize,
        role: Role,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if atoms == 0 || channels == 0 {
            return Err(Error::Domain("zero-size dictionary".into()));
        }
        Self::new(name, he_normal(&[atoms, channels], channels, rng), role)
    }

    pub fn atoms(&self) -> usize {
        self.atoms.value.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.atoms.value.shape()[1]
    }

    pub fn param_count(&self) -> usize {
        self.channels() * self.atoms()
    }

    pub fn kernel<G: Graph<T>>(&self, g: &G) -> Result<G::Var> {
        let a = g.param(&self.atoms);
        g.reshape(&a, &[self.atoms(), self.channels(), 1, 1])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LowRankDictionary<T> {
    /// `[p, s*s, r]`
    pub u: Parameter<T>,
    /// `[p, r, c]`
    pub v: Parameter<T>,
    pub side: usize,
    pub role: Role,
}

impl<T: Real> LowRankDictionary<T> {
    pub fn new(
        name: &str,
        u: Tensor<T>,
        v: Tensor<T>,
        side: usize,
        role: Role,
    ) -> Result<Self> {
        let (us, vs) = (u.shape(), v.shape());
        if us.len() != 3 || vs.len() != 3 || us[0] != vs[0] || us[2] != vs[1] || us[1] != side * side
        {
            return Err(Error::dim("LowRankDictionary", us, vs));
        }
        let (p, r, c) = (us[0], us[2], vs[2]);
        if p == 0 || c == 0 || side == 0 {
            return Err(Error::Domain("zero-size dictionary".into()));
        }
        check_rank(r, side, c)?;
        Ok(LowRankDictionary {
            u: Parameter::new(format!("{name}.U"), u),
            v: Parameter::new(format!("{name}.V"), v),
            side,
            role,
        })
    }

    /// He-initialized factors; each factor uses its own input extent as
    /// `fan_in` (`s^2` for `U`, `c` for `V`).
    #[allow(clippy::too_many_arguments)]
    pub fn init_he(
        name: &str,
        atoms: usize,
        channels: usize,
        side: usize,
        rank: usize,
        role: Role,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if atoms == 0 || channels == 0 || side == 0 {
            return Err(Error::Domain("zero-size dictionary".into()));
        }
        check_rank(rank, side, channels)?;
        let ss = side * side;
        let u = he_normal(&[atoms, ss, rank], ss, rng);
        let v = he_normal(&[atoms, rank, channels], channels, rng);
        Self::new(name, u, v, side, role)
    }

    pub fn atoms(&self) -> usize {
        self.u.value.shape()[0]
    }

    pub fn rank(&self) -> usize {
        self.u.value.shape()[2]
    }

    pub fn channels(&self) -> usize {
        self.v.value.shape()[2]
    }

    /// `(s^2 + c) r p`
    pub fn param_count(&self) -> usize {
        (self.side * self.side + self.channels()) * self.rank() * self.atoms()
    }

    /// Parameters an unconstrained dictionary of the same geometry would need.
    pub fn dense_param_count(&self) -> usize {
        self.channels() * self.side * self.side * self.atoms()
    }

    /// Kernel `[p, c, s, s]` with `kernel[j, ch, a, b] = sum_k U_j[a s + b, k] V_j[k, ch]`.
    pub fn materialize(&self) -> Result<Tensor<T>> {
        ops::lowrank_materialize(&self.u.value, &self.v.value)
    }

    pub fn kernel<G: Graph<T>>(&self, g: &G) -> Result<G::Var> {
        let u = g.param(&self.u);
        let v = g.param(&self.v);
        g.lowrank_materialize(&u, &v)
    }
}

fn check_rank(rank: usize, side: usize, channels: usize) -> Result<()> {
    let max = (side * side).min(channels);
    if rank == 0 || rank > max {
        return Err(Error::Domain(format!(
            "rank {rank} outside 1..={max} for {side}x{side} patches with {channels} channels"
        )));
    }
    Ok(())
}

/// Either parameterization, as consumed by the sparse coding layers.
#[derive(Clone, Debug, PartialEq)]
pub enum Dictionary<T> {
    Dense(DenseDictionary<T>),
    LowRank(LowRankDictionary<T>),
}

impl<T: Real> Dictionary<T> {
    pub fn side(&self) -> usize {
        match self {
            Dictionary::Dense(_) => 1,
            Dictionary::LowRank(d) => d.side,
        }
    }

    pub fn atoms(&self) -> usize {
        match self {
            Dictionary::Dense(d) => d.atoms(),
            Dictionary::LowRank(d) => d.atoms(),
        }
    }

    pub fn channels(&self) -> usize {
        match self {
            Dictionary::Dense(d) => d.channels(),
            Dictionary::LowRank(d) => d.channels(),
        }
    }

    pub fn role(&self) -> Role {
        match self {
            Dictionary::Dense(d) => d.role,
            Dictionary::LowRank(d) => d.role,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Dictionary::Dense(d) => d.param_count(),
            Dictionary::LowRank(d) => d.param_count(),
        }
    }

    pub fn kernel<G: Graph<T>>(&self, g: &G) -> Result<G::Var> {
        match self {
            Dictionary::Dense(d) => d.kernel(g),
            Dictionary::LowRank(d) => d.kernel(g),
        }
    }

    pub fn kernel_value(&self) -> Result<Tensor<T>> {
        match self {
            Dictionary::Dense(d) => d
                .atoms
                .value
                .clone()
                .reshape(&[d.atoms(), d.channels(), 1, 1]),
            Dictionary::LowRank(d) => d.materialize(),
        }
    }

    pub fn parameters(&self) -> Vec<&Parameter<T>> {
        match self {
            Dictionary::Dense(d) => vec![&d.atoms],
            Dictionary::LowRank(d) => vec![&d.u, &d.v],
        }
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        match self {
            Dictionary::Dense(d) => vec![&mut d.atoms],
            Dictionary::LowRank(d) => vec![&mut d.u, &mut d.v],
        }
    }

    /// Multiplies every atom by `factor` (the spatial factor only, for low-rank).
    pub fn scale_atoms(&mut self, factor: T) {
        let p = match self {
            Dictionary::Dense(d) => &mut d.atoms,
            Dictionary::LowRank(d) => &mut d.u,
        };
        p.value = p.value.map(|v| v * factor);
    }

    /// Copy of this dictionary under a new name and role.
    pub fn renamed(&self, name: &str, role: Role) -> Self {
        match self {
            Dictionary::Dense(d) => {
                let mut d = d.clone();
                d.atoms.name = name.to_string();
                d.role = role;
                Dictionary::Dense(d)
            }
            Dictionary::LowRank(d) => {
                let mut d = d.clone();
                d.u.name = format!("{name}.U");
                d.v.name = format!("{name}.V");
                d.role = role;
                Dictionary::LowRank(d)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Rank by Gaussian elimination with full pivoting.
    fn numeric_rank(mut m: Vec<Vec<f64>>, tol: f64) -> usize {
        let rows = m.len();
        let cols = m[0].len();
        let mut rank = 0;
        let mut used_cols = vec![false; cols];
        for _ in 0..rows.min(cols) {
            let mut best = (0.0, 0, 0);
            for (i, row) in m.iter().enumerate().skip(rank) {
                for (j, &v) in row.iter().enumerate() {
                    if !used_cols[j] && v.abs() > best.0 {
                        best = (v.abs(), i, j);
                    }
                }
            }
            if best.0 <= tol {
                break;
            }
            let (_, pi, pj) = best;
            m.swap(rank, pi);
            used_cols[pj] = true;
            let pivot = m[rank].clone();
            for row in m.iter_mut().skip(rank + 1) {
                let f = row[pj] / pivot[pj];
                for (x, p) in row.iter_mut().zip(&pivot) {
                    *x -= f * p;
                }
            }
            rank += 1;
        }
        rank
    }

    #[test]
    fn rank_one_ones_gives_all_ones_kernel() {
        let (s, c) = (3, 4);
        let u = Tensor::<f64>::ones(&[1, s * s, 1]);
        let v = Tensor::<f64>::ones(&[1, 1, c]);
        let d = LowRankDictionary::new("D", u, v, s, Role::Synthesis).unwrap();
        let k = d.materialize().unwrap();
        assert_eq!(k.shape(), &[1, c, s, s]);
        assert!(k.data().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn full_rank_factors_span_full_rank() {
        let (s, c) = (2, 3); // min(s^2, c) = 3
        let r = 3;
        // orthogonal-ish factors: identity blocks
        let u = Tensor::<f64>::from_fn(&[1, s * s, r], |i| {
            let (row, col) = (i / r, i % r);
            if row == col {
                1.0
            } else {
                0.0
            }
        });
        let v = Tensor::<f64>::from_fn(&[1, r, c], |i| if i / c == i % c { 2.0 } else { 0.0 });
        let d = LowRankDictionary::new("D", u, v, s, Role::Synthesis).unwrap();
        let k = d.materialize().unwrap();
        let m: Vec<Vec<f64>> = (0..c)
            .map(|ch| k.data()[ch * s * s..(ch + 1) * s * s].to_vec())
            .collect();
        assert_eq!(numeric_rank(m, 1e-12), r);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = LowRankDictionary::<f64>::init_he("D", 1, 7, 3, 2, Role::Synthesis, &mut rng)
            .unwrap();
        let k = d.materialize().unwrap();
        let m: Vec<Vec<f64>> = (0..7).map(|ch| k.data()[ch * 9..(ch + 1) * 9].to_vec()).collect();
        assert_eq!(numeric_rank(m, 1e-9), 2);
    }

    #[test]
    fn parameter_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d =
            LowRankDictionary::<f32>::init_he("D", 64, 31, 5, 3, Role::Synthesis, &mut rng)
                .unwrap();
        assert_eq!(d.param_count(), 10752);
        assert_eq!(d.dense_param_count(), 49600);
        let dense = DenseDictionary::<f32>::init_he("D", 64, 31, Role::Synthesis, &mut rng).unwrap();
        assert_eq!(dense.param_count(), 31 * 64);
    }

    #[test]
    fn rank_bounds_enforced() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(LowRankDictionary::<f32>::init_he("D", 4, 3, 5, 4, Role::Analysis, &mut rng).is_err());
        assert!(LowRankDictionary::<f32>::init_he("D", 4, 3, 5, 0, Role::Analysis, &mut rng).is_err());
        assert!(LowRankDictionary::<f32>::init_he("D", 4, 3, 5, 3, Role::Analysis, &mut rng).is_ok());
    }

    #[test]
    fn he_init_is_seeded_and_scaled() {
        let a = DenseDictionary::<f32>::init_he("D", 8, 5, Role::Synthesis, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = DenseDictionary::<f32>::init_he("D", 8, 5, Role::Synthesis, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);

        let (p, c) = (1000, 100);
        let d = DenseDictionary::<f64>::init_he("D", p, c, Role::Synthesis, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let data = d.atoms.value.data();
        let n = data.len() as f64;
        let mean = data.iter().sum::<f64>() / n;
        let var = data.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        let expected = 2.0 / c as f64;
        assert!((var - expected).abs() / expected < 0.05, "var {var} vs {expected}");
    }

    #[test]
    fn zero_size_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(DenseDictionary::<f32>::init_he("D", 0, 3, Role::Analysis, &mut rng).is_err());
        assert!(LowRankDictionary::<f32>::init_he("D", 0, 3, 3, 1, Role::Analysis, &mut rng).is_err());
    }
}
