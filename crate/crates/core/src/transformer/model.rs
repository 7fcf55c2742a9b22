use rand::Rng;

use super::{lit, GradientSet, LayerLayout, Model, ModelError, Result, Scalar, Tensor};

const LN_EPS: f64 = 1e-5;

/// y[t, :] = b + x[t, :] · W  for W stored `[k, n]`.
fn matmul<F: Scalar>(x: &[F], w: &[F], b: Option<&[F]>, k: usize, n: usize, out: &mut [F]) {
    for (xr, yr) in x.chunks_exact(k).zip(out.chunks_exact_mut(n)) {
        match b {
            Some(b) => yr.copy_from_slice(b),
            None => yr.fill(F::zero()),
        }
        for (kk, &xv) in xr.iter().enumerate() {
            let wr = &w[kk * n..(kk + 1) * n];
            for (y, &wv) in yr.iter_mut().zip(wr) {
                *y = *y + xv * wv;
            }
        }
    }
}

/// Accumulates dW += xᵀ·dy, db += Σ dy and writes dx = dy·Wᵀ.
#[allow(clippy::too_many_arguments)]
fn matmul_backward<F: Scalar>(
    x: &[F],
    w: &[F],
    dy: &[F],
    k: usize,
    n: usize,
    dx: &mut [F],
    dw: &mut [F],
    db: Option<&mut [F]>,
) {
    for ((xr, dyr), dxr) in x.chunks_exact(k).zip(dy.chunks_exact(n)).zip(dx.chunks_exact_mut(k)) {
        for kk in 0..k {
            let wr = &w[kk * n..(kk + 1) * n];
            dxr[kk] = wr.iter().zip(dyr).fold(F::zero(), |acc, (&a, &b)| acc + a * b);
            let xv = xr[kk];
            for (g, &d) in dw[kk * n..(kk + 1) * n].iter_mut().zip(dyr) {
                *g = *g + xv * d;
            }
        }
    }
    if let Some(db) = db {
        for dyr in dy.chunks_exact(n) {
            for (g, &d) in db.iter_mut().zip(dyr) {
                *g = *g + d;
            }
        }
    }
}

struct LnCache<F> {
    xhat: Vec<F>,
    rstd: Vec<F>,
}

fn layer_norm<F: Scalar>(x: &[F], g: &[F], b: &[F], d: usize, out: &mut [F]) -> LnCache<F> {
    let t = x.len() / d;
    let mut xhat = vec![F::zero(); x.len()];
    let mut rstd = vec![F::zero(); t];
    let inv_d = lit::<F>(1.0 / d as f64);
    for (i, (xr, yr)) in x.chunks_exact(d).zip(out.chunks_exact_mut(d)).enumerate() {
        let mean = xr.iter().copied().sum::<F>() * inv_d;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() * inv_d;
        let rs = F::one() / (var + lit(LN_EPS)).sqrt();
        rstd[i] = rs;
        for j in 0..d {
            let h = (xr[j] - mean) * rs;
            xhat[i * d + j] = h;
            yr[j] = g[j] * h + b[j];
        }
    }
    LnCache { xhat, rstd }
}

/// Writes dx (overwrites) and accumulates dg, db.
fn layer_norm_backward<F: Scalar>(
    cache: &LnCache<F>,
    g: &[F],
    dy: &[F],
    d: usize,
    dx: &mut [F],
    dg: &mut [F],
    db: &mut [F],
) {
    let inv_d = lit::<F>(1.0 / d as f64);
    for (i, (dyr, dxr)) in dy.chunks_exact(d).zip(dx.chunks_exact_mut(d)).enumerate() {
        let xh = &cache.xhat[i * d..(i + 1) * d];
        let mut mean_dxhat = F::zero();
        let mut mean_dxhat_xhat = F::zero();
        for j in 0..d {
            let dxhat = dyr[j] * g[j];
            mean_dxhat = mean_dxhat + dxhat;
            mean_dxhat_xhat = mean_dxhat_xhat + dxhat * xh[j];
            dg[j] = dg[j] + dyr[j] * xh[j];
            db[j] = db[j] + dyr[j];
        }
        mean_dxhat = mean_dxhat * inv_d;
        mean_dxhat_xhat = mean_dxhat_xhat * inv_d;
        let rs = cache.rstd[i];
        for j in 0..d {
            let dxhat = dyr[j] * g[j];
            dxr[j] = rs * (dxhat - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
    }
}

fn gelu<F: Scalar>(x: F) -> F {
    let c = lit::<F>((2.0 / std::f64::consts::PI).sqrt());
    let half = lit::<F>(0.5);
    half * x * (F::one() + (c * (x + lit::<F>(0.044715) * x * x * x)).tanh())
}

fn gelu_grad<F: Scalar>(x: F) -> F {
    let c = lit::<F>((2.0 / std::f64::consts::PI).sqrt());
    let a = lit::<F>(0.044715);
    let half = lit::<F>(0.5);
    let th = (c * (x + a * x * x * x)).tanh();
    half * (F::one() + th) + half * x * (F::one() - th * th) * c * (F::one() + lit::<F>(3.0) * a * x * x)
}

/// Numerically stable softmax over a row.
pub fn softmax_in_place<F: Scalar>(row: &mut [F]) {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    let mut sum = F::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

fn log_sum_exp<F: Scalar>(row: &[F]) -> F {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    max + row.iter().map(|&v| (v - max).exp()).sum::<F>().ln()
}

/// Mean next-token cross-entropy (natural log): row `t` of `logits` is scored
/// against `targets[t]`; `targets` must have one fewer entry than `logits` has rows.
pub fn cross_entropy<F: Scalar>(logits: &Tensor<F>, targets: &[u32]) -> Result<F> {
    let rows = logits.shape[0];
    if rows < 2 || targets.len() != rows - 1 {
        return Err(ModelError::LengthMismatch { expected: rows.saturating_sub(1), got: targets.len() });
    }
    scored_nll(logits, targets)
}

/// Mean NLL with row `t` scored against `targets[t]`; rows past the targets are ignored.
fn scored_nll<F: Scalar>(logits: &Tensor<F>, targets: &[u32]) -> Result<F> {
    let vocab = logits.shape[1];
    let mut total = F::zero();
    for (t, &y) in targets.iter().enumerate() {
        if y as usize >= vocab {
            return Err(ModelError::TokenOutOfRange { id: y, vocab });
        }
        let row = logits.row(t);
        total = total + log_sum_exp(row) - row[y as usize];
    }
    Ok(total / lit(targets.len() as f64))
}

struct BlockCache<F> {
    x_in: Vec<F>,
    ln1: LnCache<F>,
    a: Vec<F>,
    qkv: Vec<F>,
    probs: Vec<F>,
    y: Vec<F>,
    mask1: Option<Vec<F>>,
    ln2: LnCache<F>,
    m: Vec<F>,
    h_pre: Vec<F>,
    h_act: Vec<F>,
    mask2: Option<Vec<F>>,
}

struct ForwardCache<F> {
    blocks: Vec<BlockCache<F>>,
    lnf: LnCache<F>,
    xf: Vec<F>,
}

/// Per-sequence statistics used by the attack features.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardStats {
    /// Mean NLL over the T−1 scored positions.
    pub loss: f64,
    pub scored_tokens: usize,
    /// L2 norm of the flattened logits of the T−1 scored rows.
    pub logit_l2: f64,
    /// Sum over scored positions of the max softmax probability.
    pub confidence_sum: f64,
}

fn dropout_mask<F: Scalar, R: Rng>(rng: &mut R, n: usize, p: f64) -> Vec<F> {
    let keep = lit::<F>(1.0 / (1.0 - p));
    (0..n).map(|_| if rng.gen::<f64>() < p { F::zero() } else { keep }).collect()
}

impl<F: Scalar> Model<F> {
    fn check_ids(&self, ids: &[u32]) -> Result<()> {
        if ids.len() > self.config.max_seq_len {
            return Err(ModelError::SequenceTooLong { len: ids.len(), max: self.config.max_seq_len });
        }
        if let Some(&id) = ids.iter().find(|&&id| id as usize >= self.config.vocab_size) {
            return Err(ModelError::TokenOutOfRange { id, vocab: self.config.vocab_size });
        }
        Ok(())
    }

    fn w(&self, r: &std::ops::Range<usize>) -> &[F] {
        &self.weights[r.clone()]
    }

    fn attention_forward(&self, qkv: &[F], t_len: usize, probs: &mut [F], y: &mut [F]) {
        let d = self.config.d_model;
        let h_n = self.config.n_heads;
        let hd = self.config.head_dim();
        let scale = lit::<F>(1.0 / (hd as f64).sqrt());
        for h in 0..h_n {
            let p_h = &mut probs[h * t_len * t_len..(h + 1) * t_len * t_len];
            for t in 0..t_len {
                let q = &qkv[t * 3 * d + h * hd..t * 3 * d + (h + 1) * hd];
                let row = &mut p_h[t * t_len..t * t_len + t + 1];
                for (u, s) in row.iter_mut().enumerate() {
                    let k = &qkv[u * 3 * d + d + h * hd..u * 3 * d + d + (h + 1) * hd];
                    *s = q.iter().zip(k).fold(F::zero(), |acc, (&a, &b)| acc + a * b) * scale;
                }
                softmax_in_place(row);
                let yr = &mut y[t * d + h * hd..t * d + (h + 1) * hd];
                yr.fill(F::zero());
                for (u, &p) in row.iter().enumerate() {
                    let v = &qkv[u * 3 * d + 2 * d + h * hd..u * 3 * d + 2 * d + (h + 1) * hd];
                    for (o, &vv) in yr.iter_mut().zip(v) {
                        *o = *o + p * vv;
                    }
                }
            }
        }
    }

    fn attention_backward(&self, qkv: &[F], probs: &[F], dy: &[F], t_len: usize, dqkv: &mut [F]) {
        let d = self.config.d_model;
        let hd = self.config.head_dim();
        let scale = lit::<F>(1.0 / (hd as f64).sqrt());
        dqkv.fill(F::zero());
        let mut dp = vec![F::zero(); t_len];
        for h in 0..self.config.n_heads {
            let p_h = &probs[h * t_len * t_len..(h + 1) * t_len * t_len];
            for t in 0..t_len {
                let p = &p_h[t * t_len..t * t_len + t + 1];
                let dyr = &dy[t * d + h * hd..t * d + (h + 1) * hd];
                let mut weighted = F::zero();
                for u in 0..=t {
                    let vo = u * 3 * d + 2 * d + h * hd;
                    dp[u] = qkv[vo..vo + hd].iter().zip(dyr).fold(F::zero(), |acc, (&a, &b)| acc + a * b);
                    weighted = weighted + p[u] * dp[u];
                    for i in 0..hd {
                        dqkv[vo + i] = dqkv[vo + i] + p[u] * dyr[i];
                    }
                }
                let qo = t * 3 * d + h * hd;
                for u in 0..=t {
                    let ds = p[u] * (dp[u] - weighted) * scale;
                    let ko = u * 3 * d + d + h * hd;
                    for i in 0..hd {
                        dqkv[qo + i] = dqkv[qo + i] + ds * qkv[ko + i];
                        dqkv[ko + i] = dqkv[ko + i] + ds * qkv[qo + i];
                    }
                }
            }
        }
    }

    fn block_forward<R: Rng>(
        &self,
        l: &LayerLayout,
        x: &mut [F],
        t_len: usize,
        mut rng: Option<&mut R>,
    ) -> BlockCache<F> {
        let d = self.config.d_model;
        let f = self.config.d_ff;
        let p_drop = self.config.dropout;
        let x_in = x.to_vec();
        let mut a = vec![F::zero(); t_len * d];
        let ln1 = layer_norm(x, self.w(&l.ln1_g), self.w(&l.ln1_b), d, &mut a);
        let mut qkv = vec![F::zero(); t_len * 3 * d];
        matmul(&a, self.w(&l.w_qkv), Some(self.w(&l.b_qkv)), d, 3 * d, &mut qkv);
        let mut probs = vec![F::zero(); self.config.n_heads * t_len * t_len];
        let mut y = vec![F::zero(); t_len * d];
        self.attention_forward(&qkv, t_len, &mut probs, &mut y);
        let mut att = vec![F::zero(); t_len * d];
        matmul(&y, self.w(&l.w_o), Some(self.w(&l.b_o)), d, d, &mut att);
        let mask1 = match rng.as_deref_mut() {
            Some(r) if p_drop > 0.0 => Some(dropout_mask(r, att.len(), p_drop)),
            _ => None,
        };
        for (i, xv) in x.iter_mut().enumerate() {
            let v = mask1.as_ref().map_or(att[i], |m| att[i] * m[i]);
            *xv = *xv + v;
        }
        let mut m = vec![F::zero(); t_len * d];
        let ln2 = layer_norm(x, self.w(&l.ln2_g), self.w(&l.ln2_b), d, &mut m);
        let mut h_pre = vec![F::zero(); t_len * f];
        matmul(&m, self.w(&l.w_fc), Some(self.w(&l.b_fc)), d, f, &mut h_pre);
        let h_act: Vec<F> = h_pre.iter().map(|&v| gelu(v)).collect();
        let mut out = vec![F::zero(); t_len * d];
        matmul(&h_act, self.w(&l.w_proj), Some(self.w(&l.b_proj)), f, d, &mut out);
        let mask2 = match rng {
            Some(r) if p_drop > 0.0 => Some(dropout_mask(r, out.len(), p_drop)),
            _ => None,
        };
        for (i, xv) in x.iter_mut().enumerate() {
            let v = mask2.as_ref().map_or(out[i], |m| out[i] * m[i]);
            *xv = *xv + v;
        }
        BlockCache { x_in, ln1, a, qkv, probs, y, mask1, ln2, m, h_pre, h_act, mask2 }
    }

    fn forward_cached<R: Rng>(&self, ids: &[u32], mut rng: Option<&mut R>) -> Result<(Tensor<F>, ForwardCache<F>)> {
        self.check_ids(ids)?;
        let t_len = ids.len();
        let d = self.config.d_model;
        let v = self.config.vocab_size;
        let wte = self.w(&self.layout.wte);
        let wpe = self.w(&self.layout.wpe);
        let mut x = vec![F::zero(); t_len * d];
        for (t, &id) in ids.iter().enumerate() {
            let te = &wte[id as usize * d..(id as usize + 1) * d];
            let pe = &wpe[t * d..(t + 1) * d];
            for j in 0..d {
                x[t * d + j] = te[j] + pe[j];
            }
        }
        let mut blocks = Vec::with_capacity(self.config.n_layers);
        for l in &self.layout.layers {
            blocks.push(self.block_forward(l, &mut x, t_len, rng.as_deref_mut()));
        }
        let mut xf = vec![F::zero(); t_len * d];
        let lnf = layer_norm(&x, self.w(&self.layout.lnf_g), self.w(&self.layout.lnf_b), d, &mut xf);
        let mut logits = Tensor::zeros(vec![t_len, v]);
        for (xr, lr) in xf.chunks_exact(d).zip(logits.data.chunks_exact_mut(v)) {
            for (tok, out) in lr.iter_mut().enumerate() {
                let er = &wte[tok * d..(tok + 1) * d];
                *out = xr.iter().zip(er).fold(F::zero(), |acc, (&a, &b)| acc + a * b);
            }
        }
        Ok((logits, ForwardCache { blocks, lnf, xf }))
    }

    /// Evaluation-mode logits `[T, vocab_size]`; row t depends only on `ids[..=t]`.
    pub fn forward(&self, ids: &[u32]) -> Result<Tensor<F>> {
        Ok(self.forward_cached::<rand_chacha::ChaCha8Rng>(ids, None)?.0)
    }

    /// Mean next-token loss of one sequence in evaluation mode. The model reads
    /// `ids[..n-1]` and predicts `ids[1..]`, so `ids` may hold `max_seq_len + 1` tokens.
    pub fn sequence_loss(&self, ids: &[u32]) -> Result<F> {
        if ids.len() < 2 {
            return Err(ModelError::SequenceTooShort(ids.len()));
        }
        scored_nll(&self.forward(&ids[..ids.len() - 1])?, &ids[1..])
    }

    /// Mean NLL over only the last `scored` targets of a window; earlier tokens
    /// serve as context.
    pub fn suffix_loss(&self, ids: &[u32], scored: usize) -> Result<F> {
        if ids.len() < 2 {
            return Err(ModelError::SequenceTooShort(ids.len()));
        }
        let logits = self.forward(&ids[..ids.len() - 1])?;
        let skip = (ids.len() - 1).saturating_sub(scored.max(1));
        let vocab = logits.shape[1];
        let mut total = F::zero();
        for (t, &y) in ids.iter().enumerate().skip(1 + skip) {
            if y as usize >= vocab {
                return Err(ModelError::TokenOutOfRange { id: y, vocab });
            }
            let row = logits.row(t - 1);
            total = total + log_sum_exp(row) - row[y as usize];
        }
        Ok(total / lit((ids.len() - 1 - skip) as f64))
    }

    /// Loss, logit norm and confidence statistics for one window, read as in
    /// [`Model::sequence_loss`].
    pub fn forward_stats(&self, ids: &[u32]) -> Result<ForwardStats> {
        if ids.len() < 2 {
            return Err(ModelError::SequenceTooShort(ids.len()));
        }
        let logits = self.forward(&ids[..ids.len() - 1])?;
        let loss = scored_nll(&logits, &ids[1..])?.to_f64().unwrap_or(f64::NAN);
        let logit_l2 = logits
            .data
            .iter()
            .map(|v| v.to_f64().unwrap_or(f64::NAN).powi(2))
            .sum::<f64>()
            .sqrt();
        let mut confidence_sum = 0.0;
        for t in 0..ids.len() - 1 {
            let mut row = logits.row(t).to_vec();
            softmax_in_place(&mut row);
            confidence_sum += row.iter().copied().fold(F::zero(), F::max).to_f64().unwrap_or(f64::NAN);
        }
        Ok(ForwardStats { loss, scored_tokens: ids.len() - 1, logit_l2, confidence_sum })
    }

    /// Loss and its gradient for one sequence, read as in [`Model::sequence_loss`].
    /// Dropout is applied only when an rng is given.
    pub fn loss_and_gradient<R: Rng>(&self, ids: &[u32], rng: Option<&mut R>) -> Result<(F, GradientSet<F>)> {
        if ids.len() < 2 {
            return Err(ModelError::SequenceTooShort(ids.len()));
        }
        let (inputs, targets) = (&ids[..ids.len() - 1], &ids[1..]);
        let (logits, cache) = self.forward_cached(inputs, rng)?;
        let loss = scored_nll(&logits, targets)?;
        let t_len = inputs.len();
        let d = self.config.d_model;
        let f = self.config.d_ff;
        let v = self.config.vocab_size;
        let mut grad = vec![F::zero(); self.layout.total];

        // d loss / d logits
        let inv_n = lit::<F>(1.0 / t_len as f64);
        let mut dlogits = logits.data;
        for (t, &y) in targets.iter().enumerate() {
            let row = &mut dlogits[t * v..(t + 1) * v];
            softmax_in_place(row);
            row[y as usize] = row[y as usize] - F::one();
            row.iter_mut().for_each(|g| *g = *g * inv_n);
        }

        // tied head
        let wte = self.w(&self.layout.wte);
        let mut dxf = vec![F::zero(); t_len * d];
        {
            let dwte = &mut grad[self.layout.wte.clone()];
            for t in 0..t_len {
                let dl = &dlogits[t * v..(t + 1) * v];
                let xr = &cache.xf[t * d..(t + 1) * d];
                let dxr = &mut dxf[t * d..(t + 1) * d];
                for (tok, &g) in dl.iter().enumerate() {
                    if g == F::zero() {
                        continue;
                    }
                    let er = &wte[tok * d..(tok + 1) * d];
                    let der = &mut dwte[tok * d..(tok + 1) * d];
                    for j in 0..d {
                        dxr[j] = dxr[j] + g * er[j];
                        der[j] = der[j] + g * xr[j];
                    }
                }
            }
        }

        let mut dx = vec![F::zero(); t_len * d];
        {
            let (lo, hi) = (self.layout.lnf_g.start, self.layout.lnf_b.end);
            let (dg, db) = grad[lo..hi].split_at_mut(d);
            layer_norm_backward(&cache.lnf, self.w(&self.layout.lnf_g), &dxf, d, &mut dx, dg, db);
        }

        for (l, bc) in self.layout.layers.iter().zip(&cache.blocks).rev() {
            // MLP branch: x_out = x_mid + drop(proj(gelu(fc(ln2(x_mid)))))
            let dout: Vec<F> = match &bc.mask2 {
                Some(mk) => dx.iter().zip(mk).map(|(&a, &b)| a * b).collect(),
                None => dx.clone(),
            };
            let mut dh_act = vec![F::zero(); t_len * f];
            {
                let (gw, gb) = split_two(&mut grad, &l.w_proj, &l.b_proj);
                matmul_backward(&bc.h_act, self.w(&l.w_proj), &dout, f, d, &mut dh_act, gw, Some(gb));
            }
            let dh_pre: Vec<F> = dh_act.iter().zip(&bc.h_pre).map(|(&g, &x)| g * gelu_grad(x)).collect();
            let mut dm = vec![F::zero(); t_len * d];
            {
                let (gw, gb) = split_two(&mut grad, &l.w_fc, &l.b_fc);
                matmul_backward(&bc.m, self.w(&l.w_fc), &dh_pre, d, f, &mut dm, gw, Some(gb));
            }
            let mut dx_ln2 = vec![F::zero(); t_len * d];
            {
                let (gg, gb) = split_two(&mut grad, &l.ln2_g, &l.ln2_b);
                layer_norm_backward(&bc.ln2, self.w(&l.ln2_g), &dm, d, &mut dx_ln2, gg, gb);
            }
            for (a, b) in dx.iter_mut().zip(&dx_ln2) {
                *a = *a + *b;
            }

            // attention branch: x_mid = x_in + drop(o(attn(qkv(ln1(x_in)))))
            let datt: Vec<F> = match &bc.mask1 {
                Some(mk) => dx.iter().zip(mk).map(|(&a, &b)| a * b).collect(),
                None => dx.clone(),
            };
            let mut dy = vec![F::zero(); t_len * d];
            {
                let (gw, gb) = split_two(&mut grad, &l.w_o, &l.b_o);
                matmul_backward(&bc.y, self.w(&l.w_o), &datt, d, d, &mut dy, gw, Some(gb));
            }
            let mut dqkv = vec![F::zero(); t_len * 3 * d];
            self.attention_backward(&bc.qkv, &bc.probs, &dy, t_len, &mut dqkv);
            let mut da = vec![F::zero(); t_len * d];
            {
                let (gw, gb) = split_two(&mut grad, &l.w_qkv, &l.b_qkv);
                matmul_backward(&bc.a, self.w(&l.w_qkv), &dqkv, d, 3 * d, &mut da, gw, Some(gb));
            }
            let mut dx_ln1 = vec![F::zero(); t_len * d];
            {
                let (gg, gb) = split_two(&mut grad, &l.ln1_g, &l.ln1_b);
                layer_norm_backward(&bc.ln1, self.w(&l.ln1_g), &da, d, &mut dx_ln1, gg, gb);
            }
            for (a, b) in dx.iter_mut().zip(&dx_ln1) {
                *a = *a + *b;
            }
            debug_assert_eq!(bc.x_in.len(), dx.len());
        }

        // embeddings
        for (t, &id) in inputs.iter().enumerate() {
            let dxr = &dx[t * d..(t + 1) * d];
            let te = self.layout.wte.start + id as usize * d;
            let pe = self.layout.wpe.start + t * d;
            for j in 0..d {
                grad[te + j] = grad[te + j] + dxr[j];
                grad[pe + j] = grad[pe + j] + dxr[j];
            }
        }
        Ok((loss, GradientSet(grad)))
    }

    /// One (loss, gradient) per sequence, in batch order, evaluation mode.
    pub fn per_sample_gradients(&self, batch: &[Vec<u32>]) -> Result<Vec<(F, GradientSet<F>)>> {
        use rayon::prelude::*;
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        batch
            .par_iter()
            .map(|ids| self.loss_and_gradient::<rand_chacha::ChaCha8Rng>(ids, None))
            .collect()
    }
}

/// Disjoint mutable views of two non-overlapping, ordered ranges.
fn split_two<'a, F>(
    buf: &'a mut [F],
    first: &std::ops::Range<usize>,
    second: &std::ops::Range<usize>,
) -> (&'a mut [F], &'a mut [F]) {
    debug_assert!(first.end <= second.start);
    let (lo, hi) = buf.split_at_mut(second.start);
    (&mut lo[first.clone()], &mut hi[..second.len()])
}
