//! Minimal NCHW activation container.

use crate::grid::{Field, GridSpec};
use crate::real::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Tensor { n, c, h, w, data: vec![T::zero(); n * c * h * w] }
    }

    #[inline]
    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    #[inline]
    pub fn sample(&self, i: usize) -> &[T] {
        let l = self.sample_len();
        &self.data[i * l..(i + 1) * l]
    }

    #[inline]
    pub fn sample_mut(&mut self, i: usize) -> &mut [T] {
        let l = self.sample_len();
        &mut self.data[i * l..(i + 1) * l]
    }

    #[inline]
    pub fn plane(&self, i: usize, ch: usize) -> &[T] {
        let hw = self.h * self.w;
        let base = i * self.sample_len() + ch * hw;
        &self.data[base..base + hw]
    }

    #[inline]
    pub fn plane_mut(&mut self, i: usize, ch: usize) -> &mut [T] {
        let hw = self.h * self.w;
        let base = i * self.sample_len() + ch * hw;
        &mut self.data[base..base + hw]
    }

    /// Stack per-channel planes (each of length h*w) into a single sample.
    pub fn from_planes(planes: &[&[T]], h: usize, w: usize) -> Self {
        let mut t = Tensor::zeros(1, planes.len(), h, w);
        for (ch, p) in planes.iter().enumerate() {
            t.plane_mut(0, ch).copy_from_slice(p);
        }
        t
    }

    pub fn plane_field(&self, i: usize, ch: usize, spec: GridSpec) -> Field<T> {
        debug_assert_eq!(spec.len(), self.h * self.w);
        Field { spec, values: self.plane(i, ch).to_vec() }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            n: self.n,
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }
}
