use std::ops::{Index, IndexMut};

use rand::Rng;

use super::{NnError, Real, Result};

/// Row-major dense tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Real> Tensor<F> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![F::zero(); n] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<F>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(NnError::Shape(format!("shape {shape:?} needs {n} values, got {}", data.len())));
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    /// Uniform values in `[-limit, limit)`.
    pub fn uniform(shape: &[usize], limit: f64, rng: &mut impl Rng) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| F::lit(rng.gen_range(-limit..limit))).collect();
        Self { shape: shape.to_vec(), data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    /// Leading dimension.
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Product of all trailing dimensions.
    pub fn cols(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, i: usize) -> &[F] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [F] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, i: usize, j: usize) -> F {
        self.data[i * self.cols() + j]
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|x| *x = F::zero());
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        super::add_into(&other.data, &mut self.data);
    }

    pub fn scale(&mut self, s: F) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn cast<G: Real>(&self) -> Tensor<G> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| G::lit(x.as_f64())).collect() }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub(crate) fn expect_shape(&self, shape: &[usize], what: &str) -> Result<()> {
        if self.shape != shape {
            return Err(NnError::Shape(format!("{what}: expected {shape:?}, got {:?}", self.shape)));
        }
        Ok(())
    }
}

/// Handle to a tensor inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param<F> {
    pub name: String,
    pub value: Tensor<F>,
    /// Leading rows excluded from training (the embedding pad row).
    pub frozen_rows: usize,
}

/// Ordered collection of named tensors. Gradients use the same layout as the
/// parameters they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<F> {
    entries: Vec<Param<F>>,
}

impl<F: Real> Default for ParamSet<F> {
    fn default() -> Self {
        Self { entries: Vec::new() }
    }
}

impl<F: Real> ParamSet<F> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor<F>) -> ParamId {
        self.push_frozen(name, value, 0)
    }

    pub fn push_frozen(&mut self, name: impl Into<String>, value: Tensor<F>, frozen_rows: usize) -> ParamId {
        self.entries.push(Param { name: name.into(), value, frozen_rows });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<F>> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<F>> {
        self.entries.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn param(&self, id: ParamId) -> &Param<F> {
        &self.entries[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Disjoint mutable access to several tensors at once.
    ///
    /// # Panics
    /// If two ids coincide.
    pub fn many_mut<const N: usize>(&mut self, ids: [ParamId; N]) -> [&mut Tensor<F>; N] {
        self.entries.get_disjoint_mut(ids.map(|id| id.0)).expect("distinct parameter ids").map(|p| &mut p.value)
    }

    /// Same names and shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|p| Param { name: p.name.clone(), value: Tensor::zeros(p.value.shape()), frozen_rows: p.frozen_rows })
                .collect(),
        }
    }

    /// Number of trainable scalars (frozen rows excluded).
    pub fn trainable_count(&self) -> usize {
        self.entries.iter().map(|p| p.value.len() - p.frozen_rows * p.value.cols()).sum()
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            a.value.add_assign(&b.value);
        }
    }

    pub fn scale(&mut self, s: F) {
        self.entries.iter_mut().for_each(|p| p.value.scale(s));
    }

    pub fn fill_zero(&mut self) {
        self.entries.iter_mut().for_each(|p| p.value.fill_zero());
    }

    pub fn cast<G: Real>(&self) -> ParamSet<G> {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|p| Param { name: p.name.clone(), value: p.value.cast(), frozen_rows: p.frozen_rows })
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|p| p.value.all_finite())
    }

    /// Euclidean norm over every entry.
    pub fn norm(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|p| p.value.data().iter())
            .map(|x| x.as_f64() * x.as_f64())
            .sum::<f64>()
            .sqrt()
    }
}

impl<F> Index<ParamId> for ParamSet<F> {
    type Output = Tensor<F>;
    fn index(&self, id: ParamId) -> &Tensor<F> {
        &self.entries[id.0].value
    }
}

impl<F> IndexMut<ParamId> for ParamSet<F> {
    fn index_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.entries[id.0].value
    }
}
