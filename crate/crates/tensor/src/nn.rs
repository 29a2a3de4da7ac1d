use rand::Rng;

use crate::graph::Op;
use crate::kernels::{self, Window};
use crate::{Element, Graph, Result, Tensor, TensorError, Var};

impl<T: Element> Graph<'_, T> {
    /// 2-D cross-correlation. `weight` is `[cout, cin, kh, kw]`, `bias` is `[cout]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        let [n, ci, h, w] = self.value(input).dims4()?;
        let [co, wci, kh, kw] = self.value(weight).dims4()?;
        if wci != ci {
            return Err(TensorError::shape(format!("conv2d input has {ci} channels, weight expects {wci}")));
        }
        self.check_bias(bias, co)?;
        let (Some(_), Some(_)) = (kernels::conv_out_len(h, kh, stride, pad), kernels::conv_out_len(w, kw, stride, pad))
        else {
            return Err(TensorError::shape(format!(
                "kernel {kh}x{kw} (stride {stride}, pad {pad}) does not fit input {h}x{w}"
            )));
        };
        let win = Window { kh, kw, stride, pad };
        let (out, shape) = kernels::conv2d_forward(
            self.value(input).data(),
            [n, ci, h, w],
            self.value(weight).data(),
            co,
            self.value(bias).data(),
            win,
        );
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Conv2d { input, weight, bias, win }))
    }

    /// Unpadded transposed convolution. `weight` is `[cin, cout, kh, kw]`.
    pub fn conv_transpose2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize) -> Result<Var> {
        let [n, ci, h, w] = self.value(input).dims4()?;
        let [wci, co, kh, kw] = self.value(weight).dims4()?;
        if wci != ci {
            return Err(TensorError::shape(format!("conv_transpose2d input has {ci} channels, weight expects {wci}")));
        }
        if stride == 0 {
            return Err(TensorError::InvalidArgument("stride must be positive".into()));
        }
        self.check_bias(bias, co)?;
        let win = Window { kh, kw, stride, pad: 0 };
        let (out, shape) = kernels::conv_transpose2d_forward(
            self.value(input).data(),
            [n, ci, h, w],
            self.value(weight).data(),
            co,
            self.value(bias).data(),
            win,
        );
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::ConvTranspose2d { input, weight, bias, win }))
    }

    fn check_bias(&self, bias: Var, channels: usize) -> Result<()> {
        let shape = self.value(bias).shape();
        if shape != [channels] {
            return Err(TensorError::shape(format!("bias shape {shape:?}, expected [{channels}]")));
        }
        Ok(())
    }

    pub fn max_pool2d(&mut self, input: Var, kernel: usize, stride: usize) -> Result<Var> {
        let dims @ [_, _, h, w] = self.value(input).dims4()?;
        if kernel == 0 || stride == 0 || h < kernel || w < kernel {
            return Err(TensorError::shape(format!(
                "max pool {kernel}x{kernel} stride {stride} does not fit input {h}x{w}"
            )));
        }
        let (out, argmax, shape) = kernels::max_pool2d_forward(self.value(input).data(), dims, kernel, stride);
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::MaxPool { input, argmax }))
    }

    pub fn adaptive_avg_pool2d(&mut self, input: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let dims @ [n, c, h, w] = self.value(input).dims4()?;
        if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
            return Err(TensorError::shape(format!("adaptive pool {h}x{w} -> {out_h}x{out_w}")));
        }
        let out = kernels::adaptive_avg_pool2d_forward(self.value(input).data(), dims, out_h, out_w);
        let value = Tensor::new([n, c, out_h, out_w], out)?;
        Ok(self.push(value, Op::AdaptiveAvgPool { input }))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| v.max(T::zero())).collect();
        let value = Tensor::new(x.shape(), data).expect("same shape");
        self.push(value, Op::Relu { input })
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| T::one() / (T::one() + (-v).exp())).collect();
        let value = Tensor::new(x.shape(), data).expect("same shape");
        self.push(value, Op::Sigmoid { input })
    }

    /// Inverted dropout: survivors are scaled by `1 / (1 - p)` during
    /// training, evaluation is the identity and records nothing.
    pub fn dropout<R: Rng + ?Sized>(&mut self, input: Var, p: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::InvalidArgument(format!("dropout probability {p} not in [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(input);
        }
        let keep = T::from_f64(1.0 / (1.0 - p));
        let x = self.value(input);
        let mask: Vec<T> = (0..x.numel()).map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep }).collect();
        let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let value = Tensor::new(x.shape(), data)?;
        Ok(self.push(value, Op::Dropout { input, mask }))
    }

    /// `input [n, f] * weight[o, f]^T + bias[o]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let [n, f] = self.value(input).dims2()?;
        let [o, wf] = self.value(weight).dims2()?;
        if wf != f {
            return Err(TensorError::shape(format!("linear input has {f} features, weight expects {wf}")));
        }
        self.check_bias(bias, o)?;
        let mut out = vec![T::zero(); n * o];
        kernels::matmul(n, f, o, self.value(input).data(), false, self.value(weight).data(), true, T::zero(), &mut out);
        let b = self.value(bias).data();
        for row in out.chunks_mut(o) {
            row.iter_mut().zip(b).for_each(|(v, &bv)| *v += bv);
        }
        let value = Tensor::new([n, o], out)?;
        Ok(self.push(value, Op::Linear { input, weight, bias }))
    }

    /// Concatenate two NCHW tensors along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let [n, ca, h, w] = self.value(a).dims4()?;
        let [nb, cb, hb, wb] = self.value(b).dims4()?;
        if (n, h, w) != (nb, hb, wb) {
            return Err(TensorError::shape(format!("concat of [{n},{ca},{h},{w}] with [{nb},{cb},{hb},{wb}]")));
        }
        let (sa, sb) = (ca * h * w, cb * h * w);
        let mut data = Vec::with_capacity(n * (sa + sb));
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for s in 0..n {
            data.extend_from_slice(&da[s * sa..(s + 1) * sa]);
            data.extend_from_slice(&db[s * sb..(s + 1) * sb]);
        }
        let value = Tensor::new([n, ca + cb, h, w], data)?;
        Ok(self.push(value, Op::Concat { a, b }))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape { input }))
    }

    /// Collapse every axis after the first.
    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let shape = self.value(input).shape();
        let n = shape.first().copied().unwrap_or(1);
        let rest = shape.iter().skip(1).product();
        self.reshape(input, &[n, rest])
    }
}
