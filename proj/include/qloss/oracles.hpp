#ifndef QLOSS_ORACLES_HPP
#define QLOSS_ORACLES_HPP

#include <cmath>
#include <limits>
#include <stdexcept>

#include "qloss/common.hpp"

namespace qloss {

// Complete elliptic integrals by the arithmetic-geometric mean iteration.
// Argument is the modulus k (not m = k^2).
template <typename Scalar>
Scalar elliptic_k(Scalar k) {
    if (!(k >= Scalar(0)) || k >= Scalar(1))
        throw std::invalid_argument("elliptic modulus must be in [0, 1)");
    Scalar a = Scalar(1);
    Scalar b = std::sqrt(Scalar(1) - k * k);
    for (int i = 0; i < 60 && std::abs(a - b) > Scalar(4) *
                                  std::numeric_limits<Scalar>::epsilon() * a;
         ++i) {
        Scalar an = Scalar(0.5) * (a + b);
        b = std::sqrt(a * b);
        a = an;
    }
    return Scalar(pi) / (Scalar(2) * a);
}

template <typename Scalar>
Scalar elliptic_e(Scalar k) {
    if (!(k >= Scalar(0)) || k >= Scalar(1))
        throw std::invalid_argument("elliptic modulus must be in [0, 1)");
    Scalar a = Scalar(1);
    Scalar b = std::sqrt(Scalar(1) - k * k);
    Scalar c = k;
    Scalar sum = c * c;
    Scalar pow2 = Scalar(1);
    for (int i = 0; i < 60 && std::abs(c) > std::numeric_limits<Scalar>::epsilon();
         ++i) {
        Scalar an = Scalar(0.5) * (a + b);
        c = Scalar(0.5) * (a - b);
        b = std::sqrt(a * b);
        a = an;
        pow2 *= Scalar(2);
        sum += pow2 * c * c;
    }
    return elliptic_k(k) * (Scalar(1) - Scalar(0.5) * sum);
}

// Legendre relation E(k)K(k') + E(k')K(k) - K(k)K(k') = pi/2, used as a
// self-check of the AGM routines.
template <typename Scalar>
Scalar legendre_defect(Scalar k) {
    Scalar kp = std::sqrt(Scalar(1) - k * k);
    return elliptic_e(k) * elliptic_k(kp) + elliptic_e(kp) * elliptic_k(k) -
           elliptic_k(k) * elliptic_k(kp) - Scalar(pi) / Scalar(2);
}

// Capacitance per unit length of a coaxial pair of circles (F/m).
inline double coax_capacitance(double a, double b) {
    if (!(a > 0.0) || !(b > a)) throw std::invalid_argument("need 0 < a < b");
    return 2.0 * pi * eps0 / std::log(b / a);
}

// Capacitance per unit length of two coplanar strips of width w separated
// by a gap s on a substrate of relative permittivity eps_sub (F/m),
// by conformal mapping: C = eps0 (1 + eps_sub)/2 * K(k')/K(k),
// k = s/(s + 2w).
inline double coplanar_strips_capacitance(double w, double s, double eps_sub) {
    if (!(w > 0.0) || !(s > 0.0)) throw std::invalid_argument("need w, s > 0");
    double k = s / (s + 2.0 * w);
    double kp = std::sqrt(1.0 - k * k);
    return eps0 * (1.0 + eps_sub) * 0.5 * elliptic_k(kp) / elliptic_k(k);
}

} // namespace qloss

#endif
