//! Affine subgroups of the image plane: homogeneous 3x3 transforms, the
//! one-parameter families (rotation, iso-scale, shears, translations) plus the
//! two-element reflections, finite sampled orbits indexed by signed generator
//! exponents, and the algebraic identities the layered search leans on
//! (inverses, composition, commuting-prefix elimination).

use serde::{Deserialize, Serialize};

use crate::error::{ItsError, Result};
use crate::scalar::Real;

/// Numerical tolerance for the commutation precondition of
/// [`verify_elimination`]; matrices here are order-1, so this sits far above
/// double-precision noise while rejecting genuinely non-commuting pairs.
pub const COMMUTE_TOL: f64 = 1e-9;

/// Frobenius tolerance for the elimination identity itself.
pub const ELIMINATION_TOL: f64 = 1e-9;

/// A rotation bound within this distance of pi is treated as the full circle,
/// switching the orbit to cyclic sampling (step 2*pi/n, wrap-around stencils).
pub const FULL_CIRCLE_TOL: f64 = 1e-12;

/// 3x3 homogeneous affine transform acting on center-origin pixel coordinates
/// `(x, y, 1)`. Row-major; the last row is pinned to `(0, 0, 1)` and the
/// upper-left 2x2 block must stay invertible.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct AffineTransform<T: Real> {
    pub m: [[T; 3]; 3],
}

impl<T: Real> AffineTransform<T> {
    pub fn identity() -> Self {
        let o = T::one();
        let z = T::zero();
        AffineTransform {
            m: [[o, z, z], [z, o, z], [z, z, o]],
        }
    }

    /// Validating constructor: last row must be exactly `(0, 0, 1)` and all
    /// entries finite. Internal code paths build matrices directly; this is
    /// the front door for externally supplied ones.
    pub fn new(m: [[T; 3]; 3]) -> Result<Self> {
        if m[2][0] != T::zero() || m[2][1] != T::zero() || m[2][2] != T::one() {
            return Err(ItsError::BadLastRow);
        }
        if m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(ItsError::NonFinitePixels);
        }
        Ok(AffineTransform { m })
    }

    /// Matrix product `self * other`: the result applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        let a = &self.m;
        let b = &other.m;
        let mut m = [[T::zero(); 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
            }
        }
        AffineTransform { m }
    }

    /// Analytic affine inverse (2x2 block inverse plus back-rotated
    /// translation). Errors when the block determinant vanishes.
    pub fn inverse(&self) -> Result<Self> {
        let m = &self.m;
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        if !det.is_finite() || det.abs() <= T::epsilon() {
            return Err(ItsError::SingularTransform { det: det.widen() });
        }
        let inv00 = m[1][1] / det;
        let inv01 = -m[0][1] / det;
        let inv10 = -m[1][0] / det;
        let inv11 = m[0][0] / det;
        let tx = -(inv00 * m[0][2] + inv01 * m[1][2]);
        let ty = -(inv10 * m[0][2] + inv11 * m[1][2]);
        Ok(AffineTransform {
            m: [
                [inv00, inv01, tx],
                [inv10, inv11, ty],
                [T::zero(), T::zero(), T::one()],
            ],
        })
    }

    /// Map a center-origin point through the transform.
    #[inline]
    pub fn apply(&self, x: T, y: T) -> (T, T) {
        let m = &self.m;
        (
            m[0][0] * x + m[0][1] * y + m[0][2],
            m[1][0] * x + m[1][1] * y + m[1][2],
        )
    }

    /// Entry-wise maximum absolute difference.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        let mut worst = T::zero();
        for i in 0..3 {
            for j in 0..3 {
                let d = (self.m[i][j] - other.m[i][j]).abs();
                if d > worst {
                    worst = d;
                }
            }
        }
        worst
    }

    pub fn approx_eq(&self, other: &Self, tol: T) -> bool {
        self.max_abs_diff(other) <= tol
    }

    /// Binary wire form: 9 little-endian f64 values, row-major.
    pub fn to_le_bytes(&self) -> [u8; 72] {
        let mut out = [0u8; 72];
        for i in 0..3 {
            for j in 0..3 {
                let bytes = self.m[i][j].widen().to_le_bytes();
                out[(i * 3 + j) * 8..(i * 3 + j) * 8 + 8].copy_from_slice(&bytes);
            }
        }
        out
    }
}

/// Frobenius distance between two transforms: sqrt of the summed squared
/// entry differences over all 9 entries.
pub fn frobenius_distance<T: Real>(a: &AffineTransform<T>, b: &AffineTransform<T>) -> T {
    let mut acc = T::zero();
    for i in 0..3 {
        for j in 0..3 {
            let d = a.m[i][j] - b.m[i][j];
            acc += d * d;
        }
    }
    acc.sqrt()
}

/// Frobenius norm of the commutator `ab - ba`; zero iff the pair commutes.
pub fn commutator_norm<T: Real>(a: &AffineTransform<T>, b: &AffineTransform<T>) -> T {
    frobenius_distance(&a.compose(b), &b.compose(a))
}

/// The subgroup families the search can traverse. All but the reflections are
/// one-parameter; `ReflectH`/`ReflectV` hold exactly two distinct elements.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SubgroupKind {
    Rotation,
    IsoScale,
    ShearX,
    ShearY,
    TranslateX,
    TranslateY,
    ReflectH,
    ReflectV,
}

impl SubgroupKind {
    pub fn is_reflection(self) -> bool {
        matches!(self, SubgroupKind::ReflectH | SubgroupKind::ReflectV)
    }

    /// Short token used in the stack grammar and CSV columns.
    pub fn label(self) -> &'static str {
        match self {
            SubgroupKind::Rotation => "rot",
            SubgroupKind::IsoScale => "scale",
            SubgroupKind::ShearX => "shearx",
            SubgroupKind::ShearY => "sheary",
            SubgroupKind::TranslateX => "tx",
            SubgroupKind::TranslateY => "ty",
            SubgroupKind::ReflectH => "reflecth",
            SubgroupKind::ReflectV => "reflectv",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        Some(match s {
            "rot" => SubgroupKind::Rotation,
            "scale" => SubgroupKind::IsoScale,
            "shearx" => SubgroupKind::ShearX,
            "sheary" => SubgroupKind::ShearY,
            "tx" => SubgroupKind::TranslateX,
            "ty" => SubgroupKind::TranslateY,
            "reflecth" => SubgroupKind::ReflectH,
            "reflectv" => SubgroupKind::ReflectV,
            _ => return None,
        })
    }
}

/// Matrix of one family member at parameter `u`.
///
/// Parameter units: radians for rotation, log-scale for iso-scale (the matrix
/// applies `e^u`, so the sampled set is closed under composition and the
/// inverse stays on the grid), dimensionless shear factors, pixels for
/// translations. Reflections ignore the magnitude of `u`: zero means
/// identity, anything else the flip.
pub fn kind_matrix<T: Real>(kind: SubgroupKind, u: T) -> AffineTransform<T> {
    let o = T::one();
    let z = T::zero();
    let m = match kind {
        SubgroupKind::Rotation => {
            let (s, c) = u.sin_cos();
            [[c, -s, z], [s, c, z], [z, z, o]]
        }
        SubgroupKind::IsoScale => {
            let s = u.exp();
            [[s, z, z], [z, s, z], [z, z, o]]
        }
        SubgroupKind::ShearX => [[o, u, z], [z, o, z], [z, z, o]],
        SubgroupKind::ShearY => [[o, z, z], [u, o, z], [z, z, o]],
        SubgroupKind::TranslateX => [[o, z, u], [z, o, z], [z, z, o]],
        SubgroupKind::TranslateY => [[o, z, z], [z, o, u], [z, z, o]],
        SubgroupKind::ReflectH => {
            if u == z {
                return AffineTransform::identity();
            }
            [[o, z, z], [z, -o, z], [z, z, o]]
        }
        SubgroupKind::ReflectV => {
            if u == z {
                return AffineTransform::identity();
            }
            [[-o, z, z], [z, o, z], [z, z, o]]
        }
    };
    AffineTransform { m }
}

/// A finite sampled subgroup: `n` elements (odd, so the identity sits at
/// exponent 0) spread uniformly over `[-bound, bound]` in parameter space.
///
/// A rotation whose bound reaches pi covers the whole circle; its step is
/// `2*pi/n` (no duplicated endpoint) and downstream stencils wrap instead of
/// clamping. Every other configuration steps by `2*bound/(n-1)` with the
/// endpoints landing exactly on the bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SubgroupSpec<T: Real> {
    pub kind: SubgroupKind,
    pub bound: T,
    pub n: usize,
}

impl<T: Real> SubgroupSpec<T> {
    pub fn new(kind: SubgroupKind, bound: T, n: usize) -> Result<Self> {
        if n == 0 || n % 2 == 0 {
            return Err(ItsError::EvenCardinality { n });
        }
        if !bound.is_finite() || bound < T::zero() {
            return Err(ItsError::NegativeBound {
                bound: bound.widen(),
            });
        }
        Ok(SubgroupSpec { kind, bound, n })
    }

    /// Largest sampled exponent; the orbit covers `-max..=max`.
    #[inline]
    pub fn max_exponent(&self) -> i64 {
        ((self.n - 1) / 2) as i64
    }

    /// Exponents in orbit order (ascending); index `k` holds `k - (n-1)/2`.
    pub fn exponents(&self) -> impl Iterator<Item = i64> + Clone {
        -self.max_exponent()..=self.max_exponent()
    }

    /// Orbit index of an exponent (and of the identity for `j = 0`).
    #[inline]
    pub fn index_of(&self, j: i64) -> usize {
        (j + self.max_exponent()) as usize
    }

    /// True when this is a rotation subgroup spanning the full circle.
    pub fn is_cyclic(&self) -> bool {
        self.kind == SubgroupKind::Rotation && (self.bound - T::PI()).abs() <= T::of(FULL_CIRCLE_TOL)
    }

    /// Parameter distance between adjacent exponents.
    pub fn step(&self) -> T {
        if self.kind.is_reflection() {
            return T::one(); // parity unit; no metric meaning
        }
        if self.n == 1 {
            return T::zero();
        }
        if self.is_cyclic() {
            (T::PI() + T::PI()) / T::of(self.n as f64)
        } else {
            (self.bound + self.bound) / T::of((self.n - 1) as f64)
        }
    }

    /// Parameter at exponent `j`. Reflections collapse to exponent parity.
    pub fn param_at(&self, j: i64) -> T {
        if self.kind.is_reflection() {
            return if j.rem_euclid(2) == 0 { T::zero() } else { T::one() };
        }
        T::of(j as f64) * self.step()
    }

    /// Generator power `g^j` as a matrix. Exponent 0 is bit-identical to the
    /// identity for every kind.
    pub fn element_at(&self, j: i64) -> Result<AffineTransform<T>> {
        if j.abs() > self.max_exponent() {
            return Err(ItsError::ExponentOutOfRange { j, n: self.n });
        }
        if j == 0 {
            return Ok(AffineTransform::identity());
        }
        Ok(kind_matrix(self.kind, self.param_at(j)))
    }

    /// Squared Frobenius distance between the generator and its square — the
    /// squared step length along the orbit, used to normalize curvature into
    /// a confidence. Computed from the parameter map directly so it works for
    /// every odd `n >= 3` (exponent 2 need not be a sampled orbit point).
    pub fn generator_step_norm_sq(&self) -> Result<T> {
        let d = if self.kind.is_reflection() {
            // flip vs identity: two diagonal entries differ by 2
            T::of(4.0)
        } else {
            let s = self.step();
            let g1 = kind_matrix(self.kind, s);
            let g2 = kind_matrix(self.kind, s + s);
            let f = frobenius_distance(&g1, &g2);
            f * f
        };
        if d <= T::of(1e-30) {
            return Err(ItsError::DegenerateStep { norm: d.widen() });
        }
        Ok(d)
    }
}

/// Check the commuting-prefix elimination identity: with
/// `s = s_0 * s_1 * ... * s_m`, left-multiplying by `inverse(s_k)` must equal
/// the product with `s_k` removed, provided `{s_0, ..., s_(k-1), s_k^-1}`
/// pairwise commute. A violated commutation precondition is reported as an
/// error (distinct from the identity simply not holding).
pub fn verify_elimination<T: Real>(seq: &[AffineTransform<T>], k: usize) -> Result<bool> {
    if k >= seq.len() {
        return Err(ItsError::IndexOutOfBounds { k, len: seq.len() });
    }
    let gk_inv = seq[k].inverse()?;
    let commute_tol = T::of(COMMUTE_TOL);
    // Pairwise commutation over the prefix plus the eliminated inverse.
    let mut set: Vec<(usize, &AffineTransform<T>)> = seq[..k].iter().enumerate().collect();
    set.push((k, &gk_inv));
    for (i, (idx_a, a)) in set.iter().enumerate() {
        for (_idx_b, b) in set.iter().skip(i + 1) {
            let norm = commutator_norm(a, b);
            if norm > commute_tol {
                return Err(ItsError::NonCommutingPrefix {
                    index: *idx_a,
                    norm: norm.widen(),
                });
            }
        }
    }
    let full = seq
        .iter()
        .fold(AffineTransform::identity(), |acc, s| acc.compose(s));
    let reduced = seq
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != k)
        .fold(AffineTransform::identity(), |acc, (_, s)| acc.compose(s));
    let lhs = gk_inv.compose(&full);
    Ok(frobenius_distance(&lhs, &reduced) <= T::of(ELIMINATION_TOL))
}
