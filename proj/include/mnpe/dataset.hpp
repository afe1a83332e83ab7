#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mnpe/estimator.hpp"

namespace mnpe {

// Columnar CSV with a header row (theta_d_0, ..., theta_c_0, ..., x_0, ...)
// plus a JSON metadata sidecar at `path + ".meta.json"` recording the
// simulator, seed, rejection counts, and the parameter space, so a dataset
// file round-trips without access to the simulator that produced it.
// Discrete values are written on their display scale (index + offset).
void save_dataset(const Dataset& data, const MixedParamSpace& space, const std::string& path);
std::pair<Dataset, MixedParamSpace> load_dataset(const std::string& path);

// Posterior draws as CSV (theta_d_0, ..., theta_c_0, ...), display scale.
void save_mixed_samples(const std::vector<MixedSample>& samples, const MixedParamSpace& space,
                        const std::string& path);
std::vector<MixedSample> load_mixed_samples(const std::string& path,
                                            const MixedParamSpace& space);

// Per-epoch loss curves as CSV (epoch, train_loss, val_loss).
void save_training_log(const TrainResult& log, const std::string& path);

// Doubles formatted with enough digits to round-trip exactly.
std::string format_double(double v);

// Display-scale discrete value (class index + display offset, e.g. a coal
// switch year) -> internal 0-based index; InputError on non-integral or
// out-of-range values.
int discrete_index_from_display(const MixedParamSpace& space, int dim, double value);

}  // namespace mnpe
