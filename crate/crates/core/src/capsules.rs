//! Capsule layers: PrimaryCaps construction, routing-by-agreement to the
//! class capsules (FaceCaps), the squashing nonlinearity, classification
//! by capsule norm, and the reconstruction decoder.
//!
//! Gradients flow through the routing loop itself — couplings are
//! functions of the votes, so the backward pass unrolls the iterations in
//! reverse rather than treating the couplings as constants.

use crate::error::{Error, Result};
use crate::ops::{softmax_axis, Conv2d, Layer, Linear, Param, Relu, Sigmoid};
use crate::rng::{fill_gaussian, Prng};
use crate::tensor::{Scalar, Tensor};

/// Norm floor used only on gradient paths, so that backward stays finite
/// as a capsule input approaches zero.
const NORM_EPS: f64 = 1e-9;

/// Initial scale for vote-transform weights; small enough that early
/// capsule norms stay below saturation.
pub const VOTE_INIT_SIGMA: f64 = 0.05;

/// v = (‖s‖²/(1+‖s‖²)) · (s/‖s‖), continuously extended to v = 0 at s = 0.
pub fn squash<T: Scalar>(s: &[T], out: &mut [T]) {
    debug_assert_eq!(s.len(), out.len());
    let mut r2 = T::zero();
    for &x in s {
        r2 += x * x;
    }
    if r2 == T::zero() {
        out.iter_mut().for_each(|v| *v = T::zero());
        return;
    }
    let r = r2.sqrt();
    let factor = r / (T::one() + r2);
    for (o, &x) in out.iter_mut().zip(s) {
        *o = x * factor;
    }
}

/// Pullback of [`squash`]: `ds = g·dv + (g'/r)·(s·dv)·s` with
/// `g(r) = r/(1+r²)`. The norm in the denominator is floored at
/// [`NORM_EPS`].
pub fn squash_backward<T: Scalar>(s: &[T], upstream: &[T], out: &mut [T]) {
    debug_assert_eq!(s.len(), upstream.len());
    let mut r2 = T::zero();
    let mut dot = T::zero();
    for (&x, &u) in s.iter().zip(upstream) {
        r2 += x * x;
        dot += x * u;
    }
    if r2 == T::zero() {
        out.iter_mut().for_each(|v| *v = T::zero());
        return;
    }
    let r = r2.sqrt();
    let one = T::one();
    let g = r / (one + r2);
    let denom = (one + r2) * (one + r2);
    let gp = (one - r2) / denom;
    let coeff = gp / r.max(T::of(NORM_EPS)) * dot;
    for ((o, &u), &x) in out.iter_mut().zip(upstream).zip(s) {
        *o = g * u + coeff * x;
    }
}

/// Capsule norms ‖v_j‖ of a C×D capsule tensor.
pub fn capsule_norms<T: Scalar>(caps: &Tensor<T>) -> Vec<T> {
    let d = caps.shape()[1];
    caps.data()
        .chunks(d)
        .map(|v| {
            let mut r2 = T::zero();
            for &x in v {
                r2 += x * x;
            }
            r2.sqrt()
        })
        .collect()
}

/// Pullback of [`capsule_norms`]: d‖v‖/dv = v/‖v‖ per capsule.
pub fn capsule_norms_backward<T: Scalar>(caps: &Tensor<T>, dnorms: &[T]) -> Tensor<T> {
    let d = caps.shape()[1];
    let mut out = Tensor::zeros(caps.shape());
    for (j, (v, g)) in caps
        .data()
        .chunks(d)
        .zip(out.data_mut().chunks_mut(d))
        .enumerate()
    {
        let mut r2 = T::zero();
        for &x in v {
            r2 += x * x;
        }
        if r2 > T::zero() {
            let scale = dnorms[j] / r2.sqrt().max(T::of(NORM_EPS));
            for (o, &x) in g.iter_mut().zip(v) {
                *o = scale * x;
            }
        }
    }
    out
}

/// Class prediction: argmax of capsule norm, ties broken toward the
/// lowest index.
pub fn classify<T: Scalar>(norms: &[T]) -> usize {
    let mut best = 0;
    for (i, &n) in norms.iter().enumerate().skip(1) {
        if n > norms[best] {
            best = i;
        }
    }
    best
}

/// A set of capsule vectors (N capsules × D dims) with optional
/// channels×height×width layout metadata for PrimaryCaps.
#[derive(Debug, Clone)]
pub struct CapsuleMatrix<T: Scalar> {
    pub caps: Tensor<T>,
    pub layout: Option<(usize, usize, usize)>,
}

impl<T: Scalar> CapsuleMatrix<T> {
    pub fn count(&self) -> usize {
        self.caps.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.caps.shape()[1]
    }
}

/// û_{j|i} = W_ij · u_i for every input capsule i and class j.
/// `weights` is N×C×D_out×D_in, `u` is N×D_in; the result is N×C×D_out.
pub fn predict_votes<T: Scalar>(u: &Tensor<T>, weights: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, d_in) = (u.shape()[0], u.shape()[1]);
    if weights.rank() != 4 || weights.shape()[0] != n || weights.shape()[3] != d_in {
        return Err(Error::ShapeMismatch(format!(
            "vote weights {:?} incompatible with {n} capsules of dim {d_in}",
            weights.shape()
        )));
    }
    let (c, d_out) = (weights.shape()[1], weights.shape()[2]);
    let mut votes = Tensor::zeros(&[n, c, d_out]);
    let w = weights.data();
    let ud = u.data();
    let vd = votes.data_mut();
    for i in 0..n {
        let ui = &ud[i * d_in..(i + 1) * d_in];
        for j in 0..c {
            let wbase = (i * c + j) * d_out * d_in;
            let vbase = (i * c + j) * d_out;
            for a in 0..d_out {
                let row = &w[wbase + a * d_in..wbase + (a + 1) * d_in];
                let mut acc = T::zero();
                for (&wv, &uv) in row.iter().zip(ui) {
                    acc += wv * uv;
                }
                vd[vbase + a] = acc;
            }
        }
    }
    Ok(votes)
}

/// Routing coupling state: logits `b` and the couplings of every
/// iteration (last entry is the final coupling matrix). For each input
/// capsule the couplings are positive and sum to 1.
#[derive(Debug, Clone)]
pub struct RoutingState<T: Scalar> {
    pub logits: Tensor<T>,
    pub couplings: Tensor<T>,
    pub coupling_history: Vec<Tensor<T>>,
}

/// Everything the backward pass needs from a routing forward.
#[derive(Debug, Clone)]
struct RoutingTrace<T: Scalar> {
    couplings: Vec<Tensor<T>>, // c^t, N×C per iteration
    pre_squash: Vec<Tensor<T>>, // s^t, C×D per iteration
    outputs: Vec<Tensor<T>>,   // v^t, C×D per iteration
    logits: Tensor<T>,
}

fn route_trace<T: Scalar>(votes: &Tensor<T>, iterations: usize) -> Result<RoutingTrace<T>> {
    if iterations == 0 {
        return Err(Error::InvalidInput("routing needs at least 1 iteration".into()));
    }
    if votes.rank() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "votes must be N×C×D, got {:?}",
            votes.shape()
        )));
    }
    let (n, c, d) = (votes.shape()[0], votes.shape()[1], votes.shape()[2]);
    let vd = votes.data();
    let mut logits = Tensor::<T>::zeros(&[n, c]);
    let mut trace = RoutingTrace {
        couplings: Vec::with_capacity(iterations),
        pre_squash: Vec::with_capacity(iterations),
        outputs: Vec::with_capacity(iterations),
        logits: logits.clone(),
    };
    for t in 1..=iterations {
        let couplings = softmax_axis(&logits, 1)?;
        let mut s = Tensor::<T>::zeros(&[c, d]);
        {
            let sd = s.data_mut();
            let cd = couplings.data();
            for i in 0..n {
                for j in 0..c {
                    let cij = cd[i * c + j];
                    let vrow = &vd[(i * c + j) * d..(i * c + j + 1) * d];
                    let srow = &mut sd[j * d..(j + 1) * d];
                    for (sv, &vv) in srow.iter_mut().zip(vrow) {
                        *sv += cij * vv;
                    }
                }
            }
        }
        let mut v = Tensor::<T>::zeros(&[c, d]);
        for j in 0..c {
            squash(
                &s.data()[j * d..(j + 1) * d],
                &mut v.data_mut()[j * d..(j + 1) * d],
            );
        }
        // agreement update, skipped after the final iteration
        if t < iterations {
            let ld = logits.data_mut();
            let vj = v.data();
            for i in 0..n {
                for j in 0..c {
                    let vrow = &vd[(i * c + j) * d..(i * c + j + 1) * d];
                    let mut agree = T::zero();
                    for (&vv, &ov) in vrow.iter().zip(&vj[j * d..(j + 1) * d]) {
                        agree += vv * ov;
                    }
                    ld[i * c + j] += agree;
                }
            }
        }
        trace.couplings.push(couplings);
        trace.pre_squash.push(s);
        trace.outputs.push(v);
    }
    trace.logits = logits;
    Ok(trace)
}

/// Routing-by-agreement: logits start at zero; each iteration softmaxes
/// them over classes, forms weighted vote sums, squashes, and (on all but
/// the last iteration) adds the vote–output agreement back into the
/// logits. Returns the final class capsules and the routing state.
pub fn dynamic_routing<T: Scalar>(
    votes: &Tensor<T>,
    iterations: usize,
) -> Result<(Tensor<T>, RoutingState<T>)> {
    let trace = route_trace(votes, iterations)?;
    let state = RoutingState {
        logits: trace.logits.clone(),
        couplings: trace.couplings.last().expect("≥1 iteration").clone(),
        coupling_history: trace.couplings.clone(),
    };
    Ok((trace.outputs.last().expect("≥1 iteration").clone(), state))
}

/// Gradient of routing with respect to the votes, unrolling the loop in
/// reverse. `upstream` is C×D on the final capsules.
fn route_backward<T: Scalar>(
    votes: &Tensor<T>,
    trace: &RoutingTrace<T>,
    upstream: &Tensor<T>,
) -> Tensor<T> {
    let (n, c, d) = (votes.shape()[0], votes.shape()[1], votes.shape()[2]);
    let iterations = trace.outputs.len();
    let vd = votes.data();
    let mut dvotes = Tensor::<T>::zeros(&[n, c, d]);
    let mut dv = upstream.clone(); // gradient wrt v^t for the t in flight
    let mut db_carry = Tensor::<T>::zeros(&[n, c]); // identity-path grad into b^{t-1}

    for t in (0..iterations).rev() {
        let s = &trace.pre_squash[t];
        let couplings = &trace.couplings[t];
        // ds = squash pullback of dv
        let mut ds = Tensor::<T>::zeros(&[c, d]);
        for j in 0..c {
            squash_backward(
                &s.data()[j * d..(j + 1) * d],
                &dv.data()[j * d..(j + 1) * d],
                &mut ds.data_mut()[j * d..(j + 1) * d],
            );
        }
        // s^t = Σ_i c_ij û_ij: split ds into coupling and vote gradients
        let mut dc = Tensor::<T>::zeros(&[n, c]);
        {
            let dcd = dc.data_mut();
            let dsd = ds.data();
            let cd = couplings.data();
            let dvd = dvotes.data_mut();
            for i in 0..n {
                for j in 0..c {
                    let base = (i * c + j) * d;
                    let vrow = &vd[base..base + d];
                    let srow = &dsd[j * d..(j + 1) * d];
                    let mut acc = T::zero();
                    for (&vv, &sv) in vrow.iter().zip(srow) {
                        acc += vv * sv;
                    }
                    dcd[i * c + j] = acc;
                    let cij = cd[i * c + j];
                    let drow = &mut dvd[base..base + d];
                    for (dslot, &sv) in drow.iter_mut().zip(srow) {
                        *dslot += cij * sv;
                    }
                }
            }
        }
        // c^t = softmax(b^{t-1}) rows: db_prev = c ⊙ (dc − Σ_k dc_k c_k)
        let mut db_prev = Tensor::<T>::zeros(&[n, c]);
        {
            let cd = couplings.data();
            let dcd = dc.data();
            let dbd = db_prev.data_mut();
            for i in 0..n {
                let mut dotp = T::zero();
                for j in 0..c {
                    dotp += dcd[i * c + j] * cd[i * c + j];
                }
                for j in 0..c {
                    dbd[i * c + j] = cd[i * c + j] * (dcd[i * c + j] - dotp);
                }
            }
        }
        db_prev.add_assign(&db_carry);

        if t == 0 {
            // b^0 is the zero constant; nothing to propagate
            break;
        }
        // b^{t-1}(0-indexed t) came from b^{t-2} + û·v^{t-1}
        let prev_v = &trace.outputs[t - 1];
        let mut dv_next = Tensor::<T>::zeros(&[c, d]);
        {
            let dbd = db_prev.data();
            let pvd = prev_v.data();
            let dvd = dvotes.data_mut();
            let dnd = dv_next.data_mut();
            for i in 0..n {
                for j in 0..c {
                    let g = dbd[i * c + j];
                    if g == T::zero() {
                        continue;
                    }
                    let base = (i * c + j) * d;
                    for a in 0..d {
                        dvd[base + a] += g * pvd[j * d + a];
                        dnd[j * d + a] += g * vd[base + a];
                    }
                }
            }
        }
        dv = dv_next;
        db_carry = db_prev;
    }
    dvotes
}

/// The FaceCaps layer: one vote transform per (input capsule, class) pair
/// followed by dynamic routing. Input N×D_in capsules, output C×D_out.
#[derive(Debug, Clone)]
pub struct FaceCapsLayer<T: Scalar> {
    pub weights: Param<T>,
    pub iterations: usize,
    cache: Option<(Tensor<T>, Tensor<T>, RoutingTrace<T>)>, // (u, votes, trace)
}

impl<T: Scalar> FaceCapsLayer<T> {
    pub fn new(
        in_caps: usize,
        in_dim: usize,
        classes: usize,
        out_dim: usize,
        iterations: usize,
        rng: &mut Prng,
    ) -> Result<Self> {
        if iterations == 0 {
            return Err(Error::InvalidConfig("routing iterations must be >= 1".into()));
        }
        let mut weights = Tensor::zeros(&[in_caps, classes, out_dim, in_dim]);
        fill_gaussian(&mut weights, VOTE_INIT_SIGMA, rng);
        Ok(FaceCapsLayer {
            weights: Param::new("facecaps.W", weights),
            iterations,
            cache: None,
        })
    }

    pub fn classes(&self) -> usize {
        self.weights.value.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weights.value.shape()[2]
    }

    /// Forward with access to the routing state.
    pub fn forward_with_state(
        &mut self,
        u: &CapsuleMatrix<T>,
    ) -> Result<(Tensor<T>, RoutingState<T>)> {
        let votes = predict_votes(&u.caps, &self.weights.value)?;
        let trace = route_trace(&votes, self.iterations)?;
        let out = trace.outputs.last().expect("≥1 iteration").clone();
        let state = RoutingState {
            logits: trace.logits.clone(),
            couplings: trace.couplings.last().expect("≥1 iteration").clone(),
            coupling_history: trace.couplings.clone(),
        };
        self.cache = Some((u.caps.clone(), votes, trace));
        Ok((out, state))
    }

    /// Backward to the input capsules; accumulates vote-weight gradients.
    pub fn backward_caps(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let (u, votes, trace) = self
            .cache
            .take()
            .ok_or_else(|| Error::InvalidInput("facecaps backward before forward".into()))?;
        let dvotes = route_backward(&votes, &trace, upstream);
        // votes = W_ij u_i: dW_ij += dû_ij ⊗ u_i, du_i = Σ_j W_ijᵀ dû_ij
        let (n, d_in) = (u.shape()[0], u.shape()[1]);
        let (c, d_out) = (self.weights.value.shape()[1], self.weights.value.shape()[2]);
        let mut du = Tensor::<T>::zeros(&[n, d_in]);
        let w = self.weights.value.data();
        let wg = self.weights.grad.data_mut();
        let ud = u.data();
        let dvd = dvotes.data();
        let dud = du.data_mut();
        for i in 0..n {
            let ui = &ud[i * d_in..(i + 1) * d_in];
            let dui = &mut dud[i * d_in..(i + 1) * d_in];
            for j in 0..c {
                let vbase = (i * c + j) * d_out;
                let wbase = (i * c + j) * d_out * d_in;
                for a in 0..d_out {
                    let g = dvd[vbase + a];
                    if g == T::zero() {
                        continue;
                    }
                    let wrow = &w[wbase + a * d_in..wbase + (a + 1) * d_in];
                    let grow = &mut wg[wbase + a * d_in..wbase + (a + 1) * d_in];
                    for b in 0..d_in {
                        grow[b] += g * ui[b];
                        dui[b] += g * wrow[b];
                    }
                }
            }
        }
        Ok(du)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weights]
    }
}

impl<T: Scalar> Layer<T> for FaceCapsLayer<T> {
    fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let caps = CapsuleMatrix {
            caps: input.clone(),
            layout: None,
        };
        let (out, _) = self.forward_with_state(&caps)?;
        Ok(out)
    }

    fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        self.backward_caps(upstream)
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        FaceCapsLayer::params_mut(self)
    }
}

/// PrimaryCaps: a convolution whose output channels are regrouped into
/// capsule vectors, each squashed. Capsule (k, y, x) takes dims from
/// channels [k·D, (k+1)·D) at spatial position (y, x).
#[derive(Debug, Clone)]
pub struct PrimaryCaps<T: Scalar> {
    pub conv: Conv2d<T>,
    pub caps_channels: usize,
    pub caps_dim: usize,
    cache: Option<(Tensor<T>, usize, usize)>, // (pre-squash capsules, out_h, out_w)
}

impl<T: Scalar> PrimaryCaps<T> {
    pub fn new(
        in_channels: usize,
        caps_channels: usize,
        caps_dim: usize,
        kernel: usize,
        stride: usize,
        rng: &mut Prng,
    ) -> Self {
        let conv = Conv2d::new(
            "primarycaps.conv",
            in_channels,
            caps_channels * caps_dim,
            kernel,
            stride,
            0,
            rng,
        );
        PrimaryCaps {
            conv,
            caps_channels,
            caps_dim,
            cache: None,
        }
    }

    pub fn forward(&mut self, features: &Tensor<T>) -> Result<CapsuleMatrix<T>> {
        let conv_out = self.conv.forward(features)?;
        let (ch, oh, ow) = (
            conv_out.shape()[0],
            conv_out.shape()[1],
            conv_out.shape()[2],
        );
        debug_assert_eq!(ch, self.caps_channels * self.caps_dim);
        let n = self.caps_channels * oh * ow;
        let d = self.caps_dim;
        let mut pre = Tensor::<T>::zeros(&[n, d]);
        {
            let cd = conv_out.data();
            let pd = pre.data_mut();
            for k in 0..self.caps_channels {
                for y in 0..oh {
                    for x in 0..ow {
                        let cap = (k * oh + y) * ow + x;
                        for a in 0..d {
                            pd[cap * d + a] = cd[((k * d + a) * oh + y) * ow + x];
                        }
                    }
                }
            }
        }
        let mut caps = Tensor::<T>::zeros(&[n, d]);
        for i in 0..n {
            squash(
                &pre.data()[i * d..(i + 1) * d],
                &mut caps.data_mut()[i * d..(i + 1) * d],
            );
        }
        self.cache = Some((pre, oh, ow));
        Ok(CapsuleMatrix {
            caps,
            layout: Some((self.caps_channels, oh, ow)),
        })
    }

    pub fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let (pre, oh, ow) = self
            .cache
            .take()
            .ok_or_else(|| Error::InvalidInput("primarycaps backward before forward".into()))?;
        let n = pre.shape()[0];
        let d = self.caps_dim;
        let mut dpre = Tensor::<T>::zeros(&[n, d]);
        for i in 0..n {
            squash_backward(
                &pre.data()[i * d..(i + 1) * d],
                &upstream.data()[i * d..(i + 1) * d],
                &mut dpre.data_mut()[i * d..(i + 1) * d],
            );
        }
        let mut dconv = Tensor::<T>::zeros(&[self.caps_channels * d, oh, ow]);
        {
            let dd = dconv.data_mut();
            let pd = dpre.data();
            for k in 0..self.caps_channels {
                for y in 0..oh {
                    for x in 0..ow {
                        let cap = (k * oh + y) * ow + x;
                        for a in 0..d {
                            dd[((k * d + a) * oh + y) * ow + x] = pd[cap * d + a];
                        }
                    }
                }
            }
        }
        self.conv.backward(&dconv)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.conv.params_mut()
    }
}

impl<T: Scalar> Layer<T> for PrimaryCaps<T> {
    fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(PrimaryCaps::forward(self, input)?.caps)
    }

    fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        PrimaryCaps::backward(self, upstream)
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        PrimaryCaps::params_mut(self)
    }
}

/// The 3-layer reconstruction decoder: the masked capsule block through
/// two relu-separated hidden layers into a sigmoid output image.
#[derive(Debug, Clone)]
pub struct Decoder<T: Scalar> {
    fc1: Linear<T>,
    fc2: Linear<T>,
    fc3: Linear<T>,
    relu1: Relu<T>,
    relu2: Relu<T>,
    sigmoid: Sigmoid<T>,
    classes: usize,
    caps_dim: usize,
    mask: Option<usize>,
}

impl<T: Scalar> Decoder<T> {
    pub fn new(
        classes: usize,
        caps_dim: usize,
        hidden1: usize,
        hidden2: usize,
        output_len: usize,
        rng: &mut Prng,
    ) -> Self {
        Decoder {
            fc1: Linear::new("decoder.fc1", classes * caps_dim, hidden1, rng),
            fc2: Linear::new("decoder.fc2", hidden1, hidden2, rng),
            fc3: Linear::new("decoder.fc3", hidden2, output_len, rng),
            relu1: Relu::new(),
            relu2: Relu::new(),
            sigmoid: Sigmoid::new(),
            classes,
            caps_dim,
            mask: None,
        }
    }

    pub fn output_len(&self) -> usize {
        self.fc3.out_dim()
    }

    /// Zeroes every capsule except `mask_class`, flattens, decodes.
    pub fn forward(&mut self, face_caps: &Tensor<T>, mask_class: usize) -> Result<Tensor<T>> {
        if face_caps.shape() != [self.classes, self.caps_dim] {
            return Err(Error::ShapeMismatch(format!(
                "decoder expects {}×{} capsules, got {:?}",
                self.classes,
                self.caps_dim,
                face_caps.shape()
            )));
        }
        if mask_class >= self.classes {
            return Err(Error::InvalidInput(format!(
                "mask class {mask_class} out of range for {} classes",
                self.classes
            )));
        }
        let mut masked = Tensor::<T>::zeros(&[self.classes * self.caps_dim]);
        let base = mask_class * self.caps_dim;
        masked.data_mut()[base..base + self.caps_dim]
            .copy_from_slice(&face_caps.data()[base..base + self.caps_dim]);
        self.mask = Some(mask_class);
        let h1 = self.relu1.forward(&self.fc1.forward(&masked)?)?;
        let h2 = self.relu2.forward(&self.fc2.forward(&h1)?)?;
        self.sigmoid.forward(&self.fc3.forward(&h2)?)
    }

    /// Backward to the (masked) capsule block; the gradient is zero
    /// outside the masked class.
    pub fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let mask = self
            .mask
            .take()
            .ok_or_else(|| Error::InvalidInput("decoder backward before forward".into()))?;
        let d = self.sigmoid.backward(upstream)?;
        let d = self.fc3.backward(&d)?;
        let d = self.relu2.backward(&d)?;
        let d = self.fc2.backward(&d)?;
        let d = self.relu1.backward(&d)?;
        let flat = self.fc1.backward(&d)?;
        let mut dcaps = Tensor::<T>::zeros(&[self.classes, self.caps_dim]);
        let base = mask * self.caps_dim;
        dcaps.data_mut()[base..base + self.caps_dim]
            .copy_from_slice(&flat.data()[base..base + self.caps_dim]);
        Ok(dcaps)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut ps = self.fc1.params_mut();
        ps.extend(self.fc2.params_mut());
        ps.extend(self.fc3.params_mut());
        ps
    }
}
