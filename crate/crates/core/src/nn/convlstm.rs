use super::{init, ParamStore, Session};
use crate::error::{shape_err, Error, Result};
use crate::rng::Rng;
use crate::tensor::{Conv2dGeometry, Tensor, Var};

/// Hidden and cell state of a ConvLSTM, both `B×H'×W'×F`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

/// Gate activations of one step. `forget` is absent on a step without previous state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Gates {
    pub input: Var,
    pub forget: Option<Var>,
    pub output: Var,
    pub candidate: Var,
}

/// Convolutional LSTM cell.
///
/// Gate pre-activations are convolutions of the input (stride `S`, padding
/// `P`) plus convolutions of the previous hidden state (stride 1, same
/// padding, so `h` keeps its shape across steps):
///
/// ```text
/// i = hs(W_i*x + U_i*h + b_i)   f = hs(W_f*x + U_f*h + b_f)   o = hs(W_o*x + U_o*h + b_o)
/// c̃ = tanh(W_c*x + U_c*h + b_c)
/// c' = f⊙c + i⊙c̃                h' = o⊙tanh(c')
/// ```
///
/// The four input kernels are stored concatenated along the filter axis in
/// gate order `i, f, o, c` (`K×K×Cin×4F`), likewise the recurrent kernels
/// (`K×K×F×4F`) and biases (`4F`).
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLstmCell {
    pub prefix: String,
    pub in_channels: usize,
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

/// The separated per-gate weights of a cell, for inspection.
#[derive(Clone, Debug)]
pub struct GateWeights {
    /// `[i, f, o, c]`, each `K×K×Cin×F`
    pub input: [Tensor; 4],
    /// `[i, f, o, c]`, each `K×K×F×F`
    pub recurrent: [Tensor; 4],
    /// `[i, f, o, c]`, each `F`
    pub bias: [Tensor; 4],
}

impl ConvLstmCell {
    pub fn new(prefix: &str, in_channels: usize, filters: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        ConvLstmCell {
            prefix: prefix.to_string(),
            in_channels,
            filters,
            kernel,
            stride,
            pad,
        }
    }

    pub fn input_kernel(&self) -> String {
        format!("{}.input_kernel", self.prefix)
    }

    pub fn recurrent_kernel(&self) -> String {
        format!("{}.recurrent_kernel", self.prefix)
    }

    pub fn bias(&self) -> String {
        format!("{}.bias", self.prefix)
    }

    pub fn input_geometry(&self) -> Conv2dGeometry {
        Conv2dGeometry::symmetric(self.stride, self.pad)
    }

    /// State grid for an `h×w` input.
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.input_geometry()
            .output_size(h, w, self.kernel, self.kernel)
            .ok_or_else(|| Error::Shape(format!("ConvLSTM kernel {} does not fit a {h}×{w} input", self.kernel)))
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) -> Result<()> {
        let (k, cin, f) = (self.kernel, self.in_channels, self.filters);
        let wi = init::glorot_uniform(&[k, k, cin, 4 * f], k * k * cin, k * k * 4 * f, rng)?;
        let wh = init::glorot_uniform(&[k, k, f, 4 * f], k * k * f, k * k * 4 * f, rng)?;
        store.insert_param(self.input_kernel(), wi);
        store.insert_param(self.recurrent_kernel(), wh);
        store.insert_param(self.bias(), Tensor::zeros(&[4 * f]));
        Ok(())
    }

    /// One time step. `x` is `B×H×W×Cin`; `state` of `None` means zero states.
    pub fn step(&self, s: &mut Session<'_>, x: Var, state: Option<LstmState>) -> Result<LstmState> {
        Ok(self.step_with_gates(s, x, state)?.0)
    }

    /// [`ConvLstmCell::step`] that also returns the gate activations.
    pub fn step_with_gates(&self, s: &mut Session<'_>, x: Var, state: Option<LstmState>) -> Result<(LstmState, Gates)> {
        let f = self.filters;
        let wk = s.param(&self.input_kernel())?;
        let uk = s.param(&self.recurrent_kernel())?;
        let b = s.param(&self.bias())?;
        let mut z = s.graph.conv2d_geom(x, wk, b, self.input_geometry())?;
        let zshape = s.graph.shape(z).to_vec();
        let state_shape = [zshape[0], zshape[1], zshape[2], f];
        if let Some(st) = state {
            for (name, v) in [("h", st.h), ("c", st.c)] {
                if s.graph.shape(v) != state_shape {
                    return shape_err(format!(
                        "ConvLSTM `{}`: {name} state {:?}, expected {:?}",
                        self.prefix,
                        s.graph.shape(v),
                        state_shape
                    ));
                }
            }
            let zero_bias = s.constant(Tensor::zeros_dtype(&[4 * f], s.value(b).dtype()));
            let zh = s.graph.conv2d_geom(st.h, uk, zero_bias, Conv2dGeometry::same(self.kernel))?;
            z = s.graph.add(z, zh)?;
        }
        let gate = |s: &mut Session<'_>, k: usize| s.graph.slice(z, 3, k * f, f);
        let zi = gate(s, 0)?;
        let zf = gate(s, 1)?;
        let zo = gate(s, 2)?;
        let zc = gate(s, 3)?;
        let i = s.graph.hard_sigmoid(zi)?;
        let o = s.graph.hard_sigmoid(zo)?;
        let cand = s.graph.tanh(zc)?;
        let ic = s.graph.mul(i, cand)?;
        let (c, forget) = match state {
            Some(st) => {
                let fg = s.graph.hard_sigmoid(zf)?;
                let fc = s.graph.mul(fg, st.c)?;
                (s.graph.add(fc, ic)?, Some(fg))
            }
            None => (ic, None),
        };
        let tc = s.graph.tanh(c)?;
        let h = s.graph.mul(o, tc)?;
        Ok((
            LstmState { h, c },
            Gates {
                input: i,
                forget,
                output: o,
                candidate: cand,
            },
        ))
    }

    /// Splits the stored concatenated weights into per-gate tensors.
    pub fn gate_weights(&self, store: &ParamStore) -> Result<GateWeights> {
        let f = self.filters;
        let split = |t: &Tensor| -> Result<[Tensor; 4]> {
            let s = t.shape();
            let outer: usize = s[..s.len() - 1].iter().product();
            let mut parts = Vec::with_capacity(4);
            for g in 0..4 {
                let mut data = Vec::with_capacity(outer * f);
                for o in 0..outer {
                    data.extend_from_slice(&t.data()[o * 4 * f + g * f..o * 4 * f + (g + 1) * f]);
                }
                let mut shape = s.to_vec();
                *shape.last_mut().unwrap() = f;
                parts.push(Tensor::from_vec_dtype(&shape, data, t.dtype())?);
            }
            Ok(parts.try_into().expect("four gates"))
        };
        Ok(GateWeights {
            input: split(store.param(&self.input_kernel())?)?,
            recurrent: split(store.param(&self.recurrent_kernel())?)?,
            bias: split(store.param(&self.bias())?)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::tensor::DType;

    fn zero_cell_store(cell: &ConvLstmCell) -> ParamStore {
        let mut store = ParamStore::new();
        cell.init(&mut store, &mut stream(0, "init")).unwrap();
        store.zero_all();
        store
    }

    #[test]
    fn zero_weights_keep_zero_state() {
        let cell = ConvLstmCell::new("lstm", 2, 3, 3, 1, 1);
        let store = zero_cell_store(&cell);
        let mut s = Session::infer(&store);
        let mut state = None;
        for t in 0..3 {
            let x = s.constant(Tensor::from_fn(&[1, 4, 4, 2], |i| (i + t) as f64 * 0.1).unwrap());
            let st = cell.step(&mut s, x, state).unwrap();
            assert!(s.value(st.h).data().iter().all(|&v| v == 0.0));
            assert!(s.value(st.c).data().iter().all(|&v| v == 0.0));
            state = Some(st);
        }
    }

    #[test]
    fn zero_weights_halve_the_cell_state() {
        let cell = ConvLstmCell::new("lstm", 1, 2, 3, 1, 1);
        let store = zero_cell_store(&cell);
        let mut s = Session::infer(&store);
        let cval = 1.7;
        let x = s.constant(Tensor::from_vec_dtype(&[1, 2, 2, 1], vec![0.3; 4], DType::F64).unwrap());
        let h = s.constant(Tensor::from_vec_dtype(&[1, 2, 2, 2], vec![0.4; 8], DType::F64).unwrap());
        let c = s.constant(Tensor::from_vec_dtype(&[1, 2, 2, 2], vec![cval; 8], DType::F64).unwrap());
        let st = cell.step(&mut s, x, Some(LstmState { h, c })).unwrap();
        for &v in s.value(st.c).data() {
            assert_eq!(v, 0.5 * cval);
        }
        for &v in s.value(st.h).data() {
            assert_eq!(v, 0.5 * (0.5 * cval).tanh());
        }
    }

    #[test]
    fn state_shape_mismatch_is_rejected() {
        let cell = ConvLstmCell::new("lstm", 1, 2, 3, 1, 1);
        let store = zero_cell_store(&cell);
        let mut s = Session::infer(&store);
        let x = s.constant(Tensor::zeros(&[1, 3, 3, 1]));
        let bad = s.constant(Tensor::zeros(&[1, 2, 2, 2]));
        let err = cell.step(&mut s, x, Some(LstmState { h: bad, c: bad }));
        assert!(matches!(err, Err(Error::Shape(_))));
    }

    #[test]
    fn strided_geometry() {
        let cell = ConvLstmCell::new("lstm", 8, 5, 4, 2, 1);
        assert_eq!(cell.output_size(10, 16).unwrap(), (5, 8));
        assert_eq!(cell.output_size(6, 8).unwrap(), (3, 4));
    }
}
