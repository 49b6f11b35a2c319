# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled MLP kernels.

Same calling convention and semantics as ``_reference``; whole epochs run
without returning to the interpreter. Matrix products go through BLAS
``dgemm`` from scipy. Arrays are row-major; a row-major ``r x c`` matrix is
handed to BLAS as the column-major ``c x r`` transpose.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, fabs, sqrt, tanh
from libc.stdlib cimport free, malloc
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

cdef enum:
    IDENTITY = 0
    RELU = 1
    TANH = 2
    SIGMOID = 3
    SCALED_SIGMOID = 4

cdef enum:
    LOSS_MAE = 0
    LOSS_PINBALL = 1

cdef double Z_CLIP = 30.0


cdef struct Net:
    int n_layers
    int* sizes
    int* acts
    double** W
    double** b
    double bound


cdef struct Work:
    int capacity
    double** Z        # pre-activations per layer, capacity x sizes[l + 1]
    double** A        # A[0] input batch, A[l + 1] layer outputs
    double* delta
    double* delta_prev
    double** gW
    double** gb
    double* yb
    double* mb


cdef void _mm(char* ta, char* tb, int m, int n, int k, double* a, int lda, double* b, int ldb,
              double beta, double* c, int ldc) noexcept nogil:
    cdef double alpha = 1.0
    dgemm(ta, tb, &m, &n, &k, &alpha, a, &lda, b, &ldb, &beta, c, &ldc)


cdef inline double _act(double z, int code, double bound) noexcept nogil:
    if code == RELU:
        return z if z > 0.0 else 0.0
    if code == TANH:
        return tanh(z)
    if code == SIGMOID:
        return 0.5 * (1.0 + tanh(0.5 * z))
    if code == SCALED_SIGMOID:
        if z > Z_CLIP:
            z = Z_CLIP
        elif z < -Z_CLIP:
            z = -Z_CLIP
        return bound / (1.0 + exp(-z))
    return z


cdef inline double _act_grad(double z, double a, int code, double bound) noexcept nogil:
    if code == RELU:
        return 1.0 if z > 0.0 else 0.0
    if code == TANH:
        return 1.0 - a * a
    if code == SIGMOID:
        return a * (1.0 - a)
    if code == SCALED_SIGMOID:
        if fabs(z) < Z_CLIP:
            return a * (1.0 - a / bound)
        return 0.0
    return 1.0


cdef void _forward(Net* net, Work* w, int nb) noexcept nogil:
    cdef int l, i, j, fan_in, fan_out
    cdef double* z
    cdef double* a
    cdef double* bias
    for l in range(net.n_layers):
        fan_in = net.sizes[l]
        fan_out = net.sizes[l + 1]
        z = w.Z[l]
        # Z^T (out x nb) = W^T (out x in) * A^T (in x nb), column-major view
        _mm("N", "N", fan_out, nb, fan_in, net.W[l], fan_out, w.A[l], fan_in, 0.0, z, fan_out)
        a = w.A[l + 1]
        bias = net.b[l]
        for i in range(nb):
            for j in range(fan_out):
                z[i * fan_out + j] += bias[j]
                a[i * fan_out + j] = _act(z[i * fan_out + j], net.acts[l], net.bound)


cdef double _loss_grad(Net* net, Work* w, int nb, int loss, double q) noexcept nogil:
    """Forward + backward on the batch already loaded into ``w``; fills gW, gb."""
    cdef int l, i, j, fan_in, fan_out
    cdef double e, u, d, total = 0.0
    cdef double inv_n = 1.0 / nb
    cdef double* out
    cdef double* tmp
    cdef double* z
    cdef double* a
    cdef double* gb
    _forward(net, w, nb)
    out = w.A[net.n_layers]
    for i in range(nb):
        e = w.mb[i] * out[i] - w.yb[i]
        if loss == LOSS_MAE:
            total += fabs(e)
            d = 1.0 if e > 0.0 else (-1.0 if e < 0.0 else 0.0)
        else:
            u = -e
            if u > 0.0:
                total += q * u
                d = -q
            elif u < 0.0:
                total += (q - 1.0) * u
                d = 1.0 - q
            else:
                d = 0.0
        w.delta[i] = d * inv_n * w.mb[i]
    for l in range(net.n_layers - 1, -1, -1):
        fan_in = net.sizes[l]
        fan_out = net.sizes[l + 1]
        z = w.Z[l]
        a = w.A[l + 1]
        for i in range(nb * fan_out):
            w.delta[i] *= _act_grad(z[i], a[i], net.acts[l], net.bound)
        # gW^T (out x in) = delta^T (out x nb) * A (nb x in)
        _mm("N", "T", fan_out, fan_in, nb, w.delta, fan_out, w.A[l], fan_in, 0.0, w.gW[l], fan_out)
        gb = w.gb[l]
        for j in range(fan_out):
            gb[j] = 0.0
        for i in range(nb):
            for j in range(fan_out):
                gb[j] += w.delta[i * fan_out + j]
        if l > 0:
            # delta_prev^T (in x nb) = W (in x out) * delta^T (out x nb)
            _mm("T", "N", fan_in, nb, fan_out, net.W[l], fan_out, w.delta, fan_out, 0.0, w.delta_prev, fan_in)
            tmp = w.delta
            w.delta = w.delta_prev
            w.delta_prev = tmp
    return total * inv_n


cdef class _Session:
    """Owns the C views of one network's parameters and scratch buffers."""

    cdef Net net
    cdef Work work
    cdef list keep

    def __cinit__(self, weights, biases, acts, double bound, int capacity, bint with_grads):
        cdef int L = len(weights)
        cdef int l, widest
        cdef cnp.ndarray arr
        self.keep = []
        self.net.n_layers = L
        self.net.bound = bound
        self.net.sizes = <int*> malloc((L + 1) * sizeof(int))
        self.net.acts = <int*> malloc(L * sizeof(int))
        self.net.W = <double**> malloc(L * sizeof(double*))
        self.net.b = <double**> malloc(L * sizeof(double*))
        self.work.capacity = capacity
        self.work.Z = <double**> malloc(L * sizeof(double*))
        self.work.A = <double**> malloc((L + 1) * sizeof(double*))
        self.work.gW = <double**> malloc(L * sizeof(double*))
        self.work.gb = <double**> malloc(L * sizeof(double*))
        for l in range(L):
            self.net.sizes[l] = weights[l].shape[0]
            self.net.acts[l] = acts[l]
            self.net.W[l] = <double*> cnp.PyArray_DATA(<cnp.ndarray> weights[l])
            self.net.b[l] = <double*> cnp.PyArray_DATA(<cnp.ndarray> biases[l])
        self.net.sizes[L] = weights[L - 1].shape[1]
        widest = 0
        for l in range(L + 1):
            if self.net.sizes[l] > widest:
                widest = self.net.sizes[l]
        self.work.A[0] = self._buffer(capacity * self.net.sizes[0])
        for l in range(L):
            self.work.Z[l] = self._buffer(capacity * self.net.sizes[l + 1])
            self.work.A[l + 1] = self._buffer(capacity * self.net.sizes[l + 1])
            if with_grads:
                arr = np.zeros((self.net.sizes[l], self.net.sizes[l + 1]))
                self.keep.append(arr)
                self.work.gW[l] = <double*> cnp.PyArray_DATA(arr)
                arr = np.zeros(self.net.sizes[l + 1])
                self.keep.append(arr)
                self.work.gb[l] = <double*> cnp.PyArray_DATA(arr)
        if with_grads:
            self.work.delta = self._buffer(capacity * widest)
            self.work.delta_prev = self._buffer(capacity * widest)
            self.work.yb = self._buffer(capacity)
            self.work.mb = self._buffer(capacity)

    cdef double* _buffer(self, Py_ssize_t size):
        cdef cnp.ndarray arr = np.empty(max(size, 1))
        self.keep.append(arr)
        return <double*> cnp.PyArray_DATA(arr)

    def __dealloc__(self):
        free(self.net.sizes)
        free(self.net.acts)
        free(self.net.W)
        free(self.net.b)
        free(self.work.Z)
        free(self.work.A)
        free(self.work.gW)
        free(self.work.gb)


def _check(weights, biases):
    for W, b in zip(weights, biases):
        if not (W.dtype == np.float64 and W.flags.c_contiguous and b.dtype == np.float64 and b.flags.c_contiguous):
            raise ValueError("parameters must be C-contiguous float64 arrays")


def forward(weights, biases, acts, double bound, X):
    _check(weights, biases)
    cdef double[:, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef int n = x.shape[0]
    cdef int n_in = x.shape[1]
    cdef _Session s = _Session(weights, biases, acts, bound, n, False)
    cdef int L = s.net.n_layers
    cdef int n_out = s.net.sizes[L]
    out = np.empty((n, n_out))
    cdef double[:, ::1] o = out
    cdef int i
    if n == 0:
        return out
    with nogil:
        for i in range(n * n_in):
            s.work.A[0][i] = (&x[0, 0])[i]
        _forward(&s.net, &s.work, n)
        for i in range(n * n_out):
            (&o[0, 0])[i] = s.work.A[L][i]
    return out


cdef void _load_batch(Work* w, double* X, double* y, double* mult, Py_ssize_t* order,
                      int start, int nb, int n_in) noexcept nogil:
    cdef int i, j
    cdef Py_ssize_t r
    for i in range(nb):
        r = order[start + i]
        for j in range(n_in):
            w.A[0][i * n_in + j] = X[r * n_in + j]
        w.yb[i] = y[r]
        w.mb[i] = mult[r]


def _grad_arrays(_Session s):
    gw, gb = [], []
    for l in range(s.net.n_layers):
        gw.append(np.asarray(<double[:s.net.sizes[l], :s.net.sizes[l + 1]]> s.work.gW[l]).copy())
        gb.append(np.asarray(<double[:s.net.sizes[l + 1]]> s.work.gb[l]).copy())
    return gw, gb


def loss_grad(weights, biases, acts, double bound, X, y, mult, int loss, double q):
    _check(weights, biases)
    cdef double[:, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef double[::1] mv = np.ascontiguousarray(mult, dtype=np.float64)
    cdef int n = x.shape[0]
    cdef int n_in = x.shape[1]
    cdef Py_ssize_t[::1] order = np.arange(n, dtype=np.intp)
    cdef _Session s = _Session(weights, biases, acts, bound, n, True)
    cdef double value
    with nogil:
        _load_batch(&s.work, &x[0, 0], &yv[0], &mv[0], &order[0], 0, n, n_in)
        value = _loss_grad(&s.net, &s.work, n, loss, q)
    gw, gb = _grad_arrays(s)
    return value, gw, gb


def sgd_epoch(weights, biases, acts, double bound, X, y, mult, order, int batch_size, double lr,
              int loss, double q):
    _check(weights, biases)
    cdef double[:, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef double[::1] mv = np.ascontiguousarray(mult, dtype=np.float64)
    cdef Py_ssize_t[::1] ov = np.ascontiguousarray(order, dtype=np.intp)
    cdef int n = ov.shape[0]
    cdef int n_in = x.shape[1]
    cdef _Session s = _Session(weights, biases, acts, bound, min(batch_size, n), True)
    cdef int start, nb, l, i, size_w, size_b
    cdef double total = 0.0
    with nogil:
        start = 0
        while start < n:
            nb = batch_size if start + batch_size <= n else n - start
            _load_batch(&s.work, &x[0, 0], &yv[0], &mv[0], &ov[0], start, nb, n_in)
            total += _loss_grad(&s.net, &s.work, nb, loss, q) * nb
            for l in range(s.net.n_layers):
                size_w = s.net.sizes[l] * s.net.sizes[l + 1]
                size_b = s.net.sizes[l + 1]
                for i in range(size_w):
                    s.net.W[l][i] -= lr * s.work.gW[l][i]
                for i in range(size_b):
                    s.net.b[l][i] -= lr * s.work.gb[l][i]
            start += nb
    return total / n


cdef inline void _adam_update(double* p, double* g, double* m, double* v, int size, double lr,
                              double beta1, double beta2, double eps, double c1, double c2) noexcept nogil:
    cdef int i
    for i in range(size):
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]
        p[i] -= lr * (m[i] / c1) / (sqrt(v[i] / c2) + eps)


def adam_epoch(weights, biases, acts, double bound, X, y, mult, order, int batch_size, double lr,
               int loss, double q, m_w, m_b, v_w, v_b, long step, double beta1, double beta2, double eps):
    _check(weights, biases)
    _check(m_w, m_b)
    _check(v_w, v_b)
    cdef double[:, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef double[::1] mv = np.ascontiguousarray(mult, dtype=np.float64)
    cdef Py_ssize_t[::1] ov = np.ascontiguousarray(order, dtype=np.intp)
    cdef int n = ov.shape[0]
    cdef int n_in = x.shape[1]
    cdef _Session s = _Session(weights, biases, acts, bound, min(batch_size, n), True)
    cdef int L = s.net.n_layers
    cdef double** mw = <double**> malloc(L * sizeof(double*))
    cdef double** mb = <double**> malloc(L * sizeof(double*))
    cdef double** vw = <double**> malloc(L * sizeof(double*))
    cdef double** vb = <double**> malloc(L * sizeof(double*))
    cdef int start, nb, l
    cdef double total = 0.0, c1, c2
    for l in range(L):
        mw[l] = <double*> cnp.PyArray_DATA(<cnp.ndarray> m_w[l])
        mb[l] = <double*> cnp.PyArray_DATA(<cnp.ndarray> m_b[l])
        vw[l] = <double*> cnp.PyArray_DATA(<cnp.ndarray> v_w[l])
        vb[l] = <double*> cnp.PyArray_DATA(<cnp.ndarray> v_b[l])
    try:
        with nogil:
            start = 0
            while start < n:
                nb = batch_size if start + batch_size <= n else n - start
                _load_batch(&s.work, &x[0, 0], &yv[0], &mv[0], &ov[0], start, nb, n_in)
                total += _loss_grad(&s.net, &s.work, nb, loss, q) * nb
                step += 1
                c1 = 1.0 - beta1 ** step
                c2 = 1.0 - beta2 ** step
                for l in range(L):
                    _adam_update(s.net.W[l], s.work.gW[l], mw[l], vw[l], s.net.sizes[l] * s.net.sizes[l + 1],
                                 lr, beta1, beta2, eps, c1, c2)
                    _adam_update(s.net.b[l], s.work.gb[l], mb[l], vb[l], s.net.sizes[l + 1],
                                 lr, beta1, beta2, eps, c1, c2)
                start += nb
    finally:
        free(mw)
        free(mb)
        free(vw)
        free(vb)
    return total / n, step
