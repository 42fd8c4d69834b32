#pragma once

namespace valc {

/// Digamma function, x > 0. Throws DomainError otherwise.
double digamma(double x);

/// Natural log of the gamma function, x > 0. Throws DomainError otherwise.
double log_gamma(double x);

}  // namespace valc
