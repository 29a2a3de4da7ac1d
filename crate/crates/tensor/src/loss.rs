use crate::graph::Op;
use crate::{Element, Graph, Result, Tensor, TensorError, Var};

impl<T: Element> Graph<'_, T> {
    /// Mean squared error over every element.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.shape() != t.shape() {
            return Err(TensorError::shape(format!("mse of {:?} against {:?}", p.shape(), t.shape())));
        }
        if p.numel() == 0 {
            return Err(TensorError::shape("mse of empty tensors"));
        }
        let sum: T = p.data().iter().zip(t.data()).map(|(&a, &b)| (a - b) * (a - b)).sum();
        let loss = sum / T::from_f64(p.numel() as f64);
        finite(loss, "mse")?;
        Ok(self.push(Tensor::scalar(loss), Op::Mse { pred, target }))
    }

    /// Row-wise log-softmax of `[n, classes]` logits.
    pub fn log_softmax(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let [_, cols] = x.dims2()?;
        let mut data = Vec::with_capacity(x.numel());
        for row in x.data().chunks(cols) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let log_sum = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            data.extend(row.iter().map(|&v| v - log_sum));
        }
        let value = Tensor::new(x.shape(), data)?;
        if !value.is_finite() {
            return Err(TensorError::NonFinite("log_softmax"));
        }
        Ok(self.push(value, Op::LogSoftmax { input }))
    }

    /// Negative log likelihood of class indices under log-probabilities, batch mean.
    pub fn nll(&mut self, log_probs: Var, targets: &[usize]) -> Result<Var> {
        let x = self.value(log_probs);
        let [n, cols] = x.dims2()?;
        if targets.len() != n {
            return Err(TensorError::shape(format!("{} targets for batch of {n}", targets.len())));
        }
        if let Some(&index) = targets.iter().find(|&&t| t >= cols) {
            return Err(TensorError::ClassIndexOutOfRange { index, classes: cols });
        }
        let picked: T = targets.iter().enumerate().map(|(row, &t)| x.data()[row * cols + t]).sum();
        let loss = -picked / T::from_f64(n as f64);
        finite(loss, "nll")?;
        Ok(self.push(Tensor::scalar(loss), Op::Nll { input: log_probs, targets: targets.to_vec() }))
    }

    /// Cross-entropy on raw logits: log-softmax followed by NLL.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let log_probs = self.log_softmax(logits)?;
        self.nll(log_probs, targets)
    }

    /// Elementwise sum of two same-shaped tensors (used to combine losses).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(TensorError::shape(format!("add of {:?} and {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(ta.shape(), data)?;
        Ok(self.push(value, Op::Add { a, b }))
    }
}

fn finite<T: Element>(v: T, op: &'static str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(TensorError::NonFinite(op))
    }
}
