#pragma once

namespace wproj {

/// Principal branch of the Lambert W function for v >= 0: the r with r * e^r = v.
/// Throws ParameterError for negative or NaN input.
double lambert_w(double v);

/// W(e^y) for any real y, evaluated without forming e^y. Finite for every
/// finite y; returns +inf for y = +inf and 0 for y = -inf.
double lambert_w_log(double y);

}  // namespace wproj
