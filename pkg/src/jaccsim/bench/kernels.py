"""DSL source of the benchmark kernels."""

from __future__ import annotations

import functools

from ..frontend import parse_kernel

SOURCE = """
// c = a + b
@jacc(iterationSpace=ONE_DIMENSION)
kernel vadd(@read a: f32[], @read b: f32[], @write c: f32[]) {
  for i in 0..len(c) {
    c[i] = a[i] + b[i];
  }
}

// every thread folds its elements into the atomic field
@jacc(iterationSpace=ONE_DIMENSION)
kernel reduce(@read a: f32[]) {
  @atomic(op=ADD) field result: f32;
  for i in 0..len(a) {
    result = a[i];
  }
}

@jacc(iterationSpace=ONE_DIMENSION)
kernel reduce_int(@read a: i32[]) {
  @atomic(op=ADD) field result: i32;
  for i in 0..len(a) {
    result = a[i];
  }
}

@jacc(iterationSpace=ONE_DIMENSION)
kernel histogram(@read data: i32[]) {
  @atomic(op=ADD) field bins: i32[256];
  for i in 0..len(data) {
    bins[data[i] & 255] = 1;
  }
}

@jacc(iterationSpace=TWO_DIMENSION)
kernel matmul(@read a: f32[], @read b: f32[], @write c: f32[], n: i32) {
  for i in 0..n {
    for j in 0..n {
      let s = 0.0;
      for k in 0..n {
        s += a[i * n + k] * b[k * n + j];
      }
      c[i * n + j] = s;
    }
  }
}

// compressed sparse rows, one row per iteration
@jacc(iterationSpace=ONE_DIMENSION)
kernel spmv(@read rowptr: i32[], @read cols: i32[], @read vals: f32[], @read(cachable=true) x: f32[], @write y: f32[]) {
  for r in 0..len(y) {
    let s = 0.0;
    for p in rowptr[r]..rowptr[r + 1] {
      s += vals[p] * x[cols[p]];
    }
    y[r] = s;
  }
}

// zero-padded 2D convolution with a square filter
@jacc(iterationSpace=TWO_DIMENSION)
kernel conv2d(@read img: f32[], @read filt: f32[], @write out: f32[], w: i32, h: i32, fw: i32) {
  for y in 0..h {
    for x in 0..w {
      let s = 0.0;
      let r = fw / 2;
      for fy in 0..fw {
        let iy = y + fy - r;
        for fx in 0..fw {
          let ix = x + fx - r;
          let v = 0.0;
          if (iy >= 0 && iy < h && ix >= 0 && ix < w) {
            v = img[iy * w + ix];
          }
          s += v * filt[fy * fw + fx];
        }
      }
      out[y * w + x] = s;
    }
  }
}

// cumulative normal distribution, polynomial approximation
func cnd(d: f32) -> f32 {
  let k = 1.0 / (1.0 + 0.2316419 * abs(d));
  let poly = k * (0.31938153 + k * (-0.356563782 + k * (1.781477937 + k * (-1.821255978 + k * 1.330274429))));
  let c = 0.3989422804 * exp(-0.5 * d * d) * poly;
  if (d > 0.0) {
    c = 1.0 - c;
  }
  return c;
}

@jacc(iterationSpace=ONE_DIMENSION)
kernel blackscholes(@read price: f32[], @read strike: f32[], @read years: f32[], @write call: f32[], @write put: f32[], rate: f32, vol: f32) {
  for i in 0..len(price) {
    let s = price[i];
    let x = strike[i];
    let t = years[i];
    let sq = sqrt(t);
    let d1 = (log(s / x) + (rate + 0.5 * vol * vol) * t) / (vol * sq);
    let d2 = d1 - vol * sq;
    let disc = x * exp(-rate * t);
    call[i] = s * cnd(d1) - disc * cnd(d2);
    put[i] = disc * (1.0 - cnd(d2)) - s * (1.0 - cnd(d1));
  }
}

// pairwise intersection counts of term bitsets (64-bit words)
@jacc(iterationSpace=TWO_DIMENSION)
kernel correlation(@read bits: i64[], @write counts: i32[], terms: i32, words: i32) {
  for i in 0..terms {
    for j in 0..terms {
      let c = 0;
      for w in 0..words {
        c += popc(bits[i * words + w] & bits[j * words + w]);
      }
      counts[i * terms + j] = c;
    }
  }
}

// small kernels for composing task graphs
type Offset {
  lo: f32;
  hi: f32;
  bias: f32;
  count: i32;
}

@jacc(iterationSpace=ONE_DIMENSION)
kernel copy(@read x: f32[], @write y: f32[]) {
  for i in 0..len(y) {
    y[i] = x[i];
  }
}

@jacc(iterationSpace=ONE_DIMENSION)
kernel axpy(@read x: f32[], @readwrite y: f32[], alpha: f32) {
  for i in 0..len(y) {
    y[i] = alpha * x[i] + y[i];
  }
}

@jacc(iterationSpace=ONE_DIMENSION)
kernel scale(@readwrite x: f32[], alpha: f32) {
  for i in 0..len(x) {
    x[i] = x[i] * alpha;
  }
}

@jacc(iterationSpace=ONE_DIMENSION)
kernel add(@read x: f32[], @read y: f32[], @write z: f32[]) {
  for i in 0..len(z) {
    z[i] = x[i] + y[i];
  }
}

@jacc(iterationSpace=ONE_DIMENSION)
kernel fill(@write y: f32[], v: f32) {
  for i in 0..len(y) {
    y[i] = v + f32(i);
  }
}

// reads one field of a four-field record
@jacc(iterationSpace=ONE_DIMENSION)
kernel shift(@read off: Offset, @readwrite y: f32[]) {
  for i in 0..len(y) {
    y[i] = y[i] + off.bias;
  }
}
"""

BENCHMARK_KERNELS = ("vadd", "reduce", "reduce_int", "histogram", "matmul", "spmv", "conv2d", "blackscholes", "correlation")
POOL_KERNELS = ("copy", "axpy", "scale", "add", "fill", "shift")


@functools.lru_cache(maxsize=None)
def library():
    """The parsed benchmark kernel unit."""
    return parse_kernel(SOURCE, "<benchmarks>")
