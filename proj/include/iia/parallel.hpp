#pragma once

namespace iia {

/// Applies the IIA_NUM_THREADS environment variable, if set, as the worker
/// cap for all parallel loops. Returns the resulting thread count.
int configure_threads_from_env();

}  // namespace iia
