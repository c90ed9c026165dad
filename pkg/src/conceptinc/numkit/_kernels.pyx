# cython: boundscheck=False, wraparound=False, initializedcheck=False, language_level=3
"""Fixed-order dense matrix products.

Every output element accumulates its inner index strictly left to right,
starting from 0.0. The NumPy fallback replays exactly this order, so both
backends agree bitwise (the extension is built with -ffp-contract=off).
"""


cdef extern from "_mm_kernel.h" nogil:
    void fixed_order_mm(const double* a, const double* b, double* out,
                        Py_ssize_t m, Py_ssize_t k, Py_ssize_t n)


def matmul_into(const double[:, ::1] a, const double[:, ::1] b, double[:, ::1] out):
    cdef Py_ssize_t m = a.shape[0], k = a.shape[1], n = b.shape[1]
    if m == 0 or n == 0:
        return
    if k == 0:
        out[:, :] = 0.0
        return
    with nogil:
        fixed_order_mm(&a[0, 0], &b[0, 0], &out[0, 0], m, k, n)


def bmm_into(const double[:, :, ::1] a, const double[:, :, ::1] b, double[:, :, ::1] out):
    cdef Py_ssize_t nb = a.shape[0], m = a.shape[1], k = a.shape[2], n = b.shape[2]
    cdef Py_ssize_t q
    if nb == 0 or m == 0 or n == 0:
        return
    if k == 0:
        out[:, :, :] = 0.0
        return
    with nogil:
        for q in range(nb):
            fixed_order_mm(&a[q, 0, 0], &b[q, 0, 0], &out[q, 0, 0], m, k, n)
