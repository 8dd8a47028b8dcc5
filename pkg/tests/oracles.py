"""Independent scalar-loop reference implementations shared by tests."""
import math

import numpy as np

K1, K2 = 0.01, 0.03


def loop_psnr(a, b):
    mse = 0.0
    for v, w in zip(a.ravel(), b.ravel()):
        mse += (float(v) - float(w)) ** 2
    mse /= a.size
    return 99.0 if mse == 0 else min(99.0, 10 * math.log10(1.0 / mse))


def loop_ssim(a, b, size=11, sigma=1.5):
    """Scalar-loop SSIM: explicit Gaussian-weighted window sums, valid region only."""
    half = (size - 1) / 2
    g = [[math.exp(-((i - half) ** 2 + (j - half) ** 2) / (2 * sigma ** 2)) for j in range(size)]
         for i in range(size)]
    tot = sum(sum(r) for r in g)
    g = [[v / tot for v in r] for r in g]
    c1, c2 = K1 ** 2, K2 ** 2
    h, w, ch = a.shape
    vals = []
    for c in range(ch):
        for y in range(h - size + 1):
            for x in range(w - size + 1):
                ma = mb = saa = sbb = sab = 0.0
                for i in range(size):
                    for j in range(size):
                        p, q, wt = a[y + i, x + j, c], b[y + i, x + j, c], g[i][j]
                        ma += wt * p
                        mb += wt * q
                        saa += wt * p * p
                        sbb += wt * q * q
                        sab += wt * p * q
                va, vb, cov = saa - ma * ma, sbb - mb * mb, sab - ma * mb
                vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
    return sum(vals) / len(vals)


def loop_conv1x1(x, w, b):
    c_out, c_in = w.shape[:2]
    _, h, wd = x.shape
    out = np.zeros((c_out, h, wd))
    for o in range(c_out):
        for y in range(h):
            for xx in range(wd):
                out[o, y, xx] = b[o] + sum(w[o, i, 0, 0] * x[i, y, xx] for i in range(c_in))
    return out


def loop_depthwise3x3(x, w, b):
    c, h, wd = x.shape
    out = np.zeros_like(x)
    for ch in range(c):
        for y in range(h):
            for xx in range(wd):
                acc = b[ch]
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        yy, xq = y + dy, xx + dx
                        if 0 <= yy < h and 0 <= xq < wd:
                            acc += w[ch, 0, dy + 1, dx + 1] * x[ch, yy, xq]
                out[ch, y, xx] = acc
    return out


def loop_iaca(mod, f_enc, l_feat):
    """Materializes every d_k x d_k attention matrix with explicit loops."""
    p = {k: v.detach().numpy() for k, v in mod.state_dict().items()}
    f, l = f_enc[0].numpy(), l_feat[0].numpy()
    q = loop_depthwise3x3(loop_conv1x1(l, p["q_proj.weight"], p["q_proj.bias"]), p["q_dw.weight"], p["q_dw.bias"])
    k = loop_depthwise3x3(loop_conv1x1(f, p["k_proj.weight"], p["k_proj.bias"]), p["k_dw.weight"], p["k_dw.bias"])
    v = loop_depthwise3x3(loop_conv1x1(f, p["v_proj.weight"], p["v_proj.bias"]), p["v_dw.weight"], p["v_dw.bias"])
    c, h, w = q.shape
    heads = mod.heads
    d_k = c // heads
    alpha = np.exp(p["log_alpha"])
    agg = np.zeros_like(q)
    for hd in range(heads):
        for i in range(d_k):
            ci = hd * d_k + i
            logits = []
            for j in range(d_k):
                cj = hd * d_k + j
                s = 0.0
                for y in range(h):
                    for x in range(w):
                        s += q[ci, y, x] * k[cj, y, x]
                logits.append(s / alpha[hd])
            m = max(logits)
            e = [math.exp(z - m) for z in logits]
            weights = [z / sum(e) for z in e]
            for j in range(d_k):
                agg[ci] += weights[j] * v[hd * d_k + j]
    return loop_conv1x1(agg, p["out.weight"], p["out.bias"])


def kernel_convolution_oracle(x, delta, A, B, C):
    """LTI case in numpy: y_t = sum_j kappa_j x_{t-j}, kappa_j = sum_n C_n abar_n^j dt B_n."""
    x, A, B, C = (t.numpy() for t in (x, A, B, C))
    dt = delta.numpy()
    L, d = x.shape
    y = np.zeros_like(x)
    for c in range(d):
        abar = np.exp(dt[c] * A[c])
        kappa = np.array([np.sum(C * abar ** j * dt[c] * B) for j in range(L)])
        full = np.convolve(x[:, c], kappa)[:L]
        y[:, c] = full
    return y
