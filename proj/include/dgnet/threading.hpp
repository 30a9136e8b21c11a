#pragma once

namespace dgnet {

/// Caps the OpenMP worker count with the DGNET_THREADS environment variable
/// when set. Returns the resulting maximum thread count. Throws ConfigError
/// when the variable is not a positive integer.
int configure_threads();

} // namespace dgnet
