//! Forward implementations and shape checks for every primitive.

use std::rc::Rc;

use super::conv::conv2d_forward;
use super::{record, Op, Scalar, Tensor, TensorData};
use crate::error::{Error, Result};

fn check_equal_shapes<E: Scalar>(
    op: &'static str,
    a: &Tensor<E>,
    b: &Tensor<E>,
) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("left {:?} vs right {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn zip_map<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>, f: impl Fn(E, E) -> E) -> TensorData<E> {
    let data = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(&x, &y)| f(x, y))
        .collect();
    TensorData {
        shape: a.shape().to_vec(),
        data,
    }
}

impl<E: Scalar> Tensor<E> {
    pub fn add(&self, rhs: &Tensor<E>) -> Result<Tensor<E>> {
        check_equal_shapes("add", self, rhs)?;
        let out = zip_map(self, rhs, |x, y| x + y);
        Ok(record(&[self, rhs], Rc::new(out), |ids| {
            Op::Add(ids[0], ids[1])
        }))
    }

    pub fn sub(&self, rhs: &Tensor<E>) -> Result<Tensor<E>> {
        check_equal_shapes("sub", self, rhs)?;
        let out = zip_map(self, rhs, |x, y| x - y);
        Ok(record(&[self, rhs], Rc::new(out), |ids| {
            Op::Sub(ids[0], ids[1])
        }))
    }

    pub fn mul(&self, rhs: &Tensor<E>) -> Result<Tensor<E>> {
        check_equal_shapes("mul", self, rhs)?;
        let out = zip_map(self, rhs, |x, y| x * y);
        Ok(record(&[self, rhs], Rc::new(out), |ids| {
            Op::Mul(ids[0], ids[1])
        }))
    }

    pub fn div(&self, rhs: &Tensor<E>) -> Result<Tensor<E>> {
        check_equal_shapes("div", self, rhs)?;
        let out = zip_map(self, rhs, |x, y| x / y);
        Ok(record(&[self, rhs], Rc::new(out), |ids| {
            Op::Div(ids[0], ids[1])
        }))
    }

    pub fn scale(&self, c: E) -> Tensor<E> {
        let out = self.value.map(|x| x * c);
        record(&[self], Rc::new(out), |ids| Op::Scale(ids[0], c))
    }

    pub fn add_scalar(&self, c: E) -> Tensor<E> {
        let out = self.value.map(|x| x + c);
        record(&[self], Rc::new(out), |ids| Op::AddScalar(ids[0], c))
    }

    pub fn tanh(&self) -> Tensor<E> {
        let out = self.value.map(|x| x.tanh());
        record(&[self], Rc::new(out), |ids| Op::Tanh(ids[0]))
    }

    pub fn relu(&self) -> Tensor<E> {
        let out = self.value.map(|x| if x > E::zero() { x } else { E::zero() });
        record(&[self], Rc::new(out), |ids| Op::Relu(ids[0]))
    }

    /// `max(x, floor).powf(exp)`. The floor keeps fractional powers defined
    /// (and their gradients bounded) when the base can dip to zero or below,
    /// as the per-scale similarity terms can.
    pub fn pow_floor(&self, exp: E, floor: E) -> Tensor<E> {
        let out = self.value.map(|x| x.max(floor).powf(exp));
        record(&[self], Rc::new(out), |ids| Op::PowFloor {
            input: ids[0],
            exp,
            floor,
        })
    }

    pub fn square(&self) -> Result<Tensor<E>> {
        self.mul(self)
    }

    fn check_nonempty(&self, op: &'static str) -> Result<()> {
        if self.numel() == 0 {
            return Err(Error::shape(op, "empty tensor".to_string()));
        }
        Ok(())
    }

    /// Arithmetic mean, reduced to a scalar tensor.
    pub fn mean(&self) -> Result<Tensor<E>> {
        self.check_nonempty("mean")?;
        let n = E::from_f64(self.numel() as f64);
        let s: E = self.data().iter().copied().sum();
        let out = TensorData::scalar(s / n);
        Ok(record(&[self], Rc::new(out), |ids| Op::Mean(ids[0])))
    }

    pub fn sum(&self) -> Result<Tensor<E>> {
        self.check_nonempty("sum")?;
        let s: E = self.data().iter().copied().sum();
        let out = TensorData::scalar(s);
        Ok(record(&[self], Rc::new(out), |ids| Op::Sum(ids[0])))
    }

    /// Euclidean norm `sqrt(sum(x^2))`, reduced to a scalar tensor.
    pub fn l2norm(&self) -> Result<Tensor<E>> {
        self.check_nonempty("l2norm")?;
        let s: E = self.data().iter().map(|&x| x * x).sum();
        let out = TensorData::scalar(s.sqrt());
        Ok(record(&[self], Rc::new(out), |ids| Op::L2Norm(ids[0])))
    }

    /// Per-channel bias add: `map[c,h,w] + bias[c]`.
    pub fn add_bias2d(&self, bias: &Tensor<E>) -> Result<Tensor<E>> {
        if self.shape().len() != 3 || bias.shape().len() != 1 {
            return Err(Error::shape(
                "add_bias2d",
                format!("map {:?}, bias {:?}", self.shape(), bias.shape()),
            ));
        }
        let (c, h, w) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        if bias.shape()[0] != c {
            return Err(Error::shape(
                "add_bias2d",
                format!("map has {c} channels, bias has {}", bias.shape()[0]),
            ));
        }
        let mut data = self.data().to_vec();
        for ci in 0..c {
            let b = bias.data()[ci];
            for v in &mut data[ci * h * w..(ci + 1) * h * w] {
                *v = *v + b;
            }
        }
        let out = TensorData {
            shape: self.shape().to_vec(),
            data,
        };
        Ok(record(&[self, bias], Rc::new(out), |ids| Op::AddBias2d {
            map: ids[0],
            bias: ids[1],
        }))
    }

    /// Channel concatenation of two C×H×W maps.
    pub fn concat_c(&self, rhs: &Tensor<E>) -> Result<Tensor<E>> {
        if self.shape().len() != 3
            || rhs.shape().len() != 3
            || self.shape()[1..] != rhs.shape()[1..]
        {
            return Err(Error::shape(
                "concat_c",
                format!("left {:?} vs right {:?}", self.shape(), rhs.shape()),
            ));
        }
        let mut data = Vec::with_capacity(self.numel() + rhs.numel());
        data.extend_from_slice(self.data());
        data.extend_from_slice(rhs.data());
        let out = TensorData {
            shape: vec![
                self.shape()[0] + rhs.shape()[0],
                self.shape()[1],
                self.shape()[2],
            ],
            data,
        };
        Ok(record(&[self, rhs], Rc::new(out), |ids| {
            Op::ConcatC(ids[0], ids[1])
        }))
    }

    /// 2×2 average pooling with stride 2. Odd trailing rows/columns are
    /// dropped (floor semantics).
    pub fn avg_pool2(&self) -> Result<Tensor<E>> {
        if self.shape().len() != 3 {
            return Err(Error::shape(
                "avg_pool2",
                format!("expected C×H×W, got {:?}", self.shape()),
            ));
        }
        let (c, h, w) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let (oh, ow) = (h / 2, w / 2);
        if oh == 0 || ow == 0 {
            return Err(Error::shape(
                "avg_pool2",
                format!("input {h}×{w} too small to pool"),
            ));
        }
        let quarter = E::from_f64(0.25);
        let src = self.data();
        let mut data = vec![E::zero(); c * oh * ow];
        for ci in 0..c {
            for oy in 0..oh {
                let r0 = &src[ci * h * w + 2 * oy * w..];
                let r1 = &src[ci * h * w + (2 * oy + 1) * w..];
                let dst = &mut data[ci * oh * ow + oy * ow..ci * oh * ow + (oy + 1) * ow];
                for (ox, d) in dst.iter_mut().enumerate() {
                    *d = (r0[2 * ox] + r0[2 * ox + 1] + r1[2 * ox] + r1[2 * ox + 1]) * quarter;
                }
            }
        }
        let out = TensorData {
            shape: vec![c, oh, ow],
            data,
        };
        Ok(record(&[self], Rc::new(out), |ids| Op::AvgPool2(ids[0])))
    }

    /// Nearest-neighbour 2× upsampling of a C×H×W map.
    pub fn upsample2(&self) -> Result<Tensor<E>> {
        if self.shape().len() != 3 {
            return Err(Error::shape(
                "upsample2",
                format!("expected C×H×W, got {:?}", self.shape()),
            ));
        }
        let (c, h, w) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let (oh, ow) = (2 * h, 2 * w);
        let src = self.data();
        let mut data = vec![E::zero(); c * oh * ow];
        for ci in 0..c {
            for oy in 0..oh {
                let srow = &src[ci * h * w + (oy / 2) * w..][..w];
                let drow = &mut data[ci * oh * ow + oy * ow..][..ow];
                for (ox, d) in drow.iter_mut().enumerate() {
                    *d = srow[ox / 2];
                }
            }
        }
        let out = TensorData {
            shape: vec![c, oh, ow],
            data,
        };
        Ok(record(&[self], Rc::new(out), |ids| Op::Upsample2(ids[0])))
    }
}

/// 2-d cross-correlation of a C_in×H×W input with a C_out×C_in×k×k kernel.
pub fn conv2d<E: Scalar>(
    input: &Tensor<E>,
    kernel: &Tensor<E>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<E>> {
    let out = conv2d_forward(input.value(), kernel.value(), stride, padding)?;
    Ok(record(&[input, kernel], Rc::new(out), |ids| Op::Conv2d {
        input: ids[0],
        kernel: ids[1],
        stride,
        padding,
    }))
}

/// Fully connected layer `weight[out,in] · x[in] + bias[out]`.
pub fn linear<E: Scalar>(
    weight: &Tensor<E>,
    input: &Tensor<E>,
    bias: &Tensor<E>,
) -> Result<Tensor<E>> {
    if weight.shape().len() != 2 || input.shape().len() != 1 || bias.shape().len() != 1 {
        return Err(Error::shape(
            "linear",
            format!(
                "weight {:?}, input {:?}, bias {:?}",
                weight.shape(),
                input.shape(),
                bias.shape()
            ),
        ));
    }
    let (o, i) = (weight.shape()[0], weight.shape()[1]);
    if input.shape()[0] != i || bias.shape()[0] != o {
        return Err(Error::shape(
            "linear",
            format!(
                "weight is {o}×{i}, input has {} features, bias has {}",
                input.shape()[0],
                bias.shape()[0]
            ),
        ));
    }
    let w = weight.data();
    let x = input.data();
    let data: Vec<E> = (0..o)
        .map(|oi| {
            let row = &w[oi * i..(oi + 1) * i];
            let dot: E = row.iter().zip(x.iter()).map(|(&a, &b)| a * b).sum();
            dot + bias.data()[oi]
        })
        .collect();
    let out = TensorData {
        shape: vec![o],
        data,
    };
    Ok(record(&[weight, input, bias], Rc::new(out), |ids| {
        Op::Linear {
            weight: ids[0],
            input: ids[1],
            bias: ids[2],
        }
    }))
}
