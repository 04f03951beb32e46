#pragma once

#include "onoff/dataset_io.hpp"
#include "onoff/distribution.hpp"
#include "onoff/em.hpp"
#include "onoff/error.hpp"
#include "onoff/forward_model.hpp"
#include "onoff/inference.hpp"
#include "onoff/model_spec.hpp"
#include "onoff/serialization.hpp"

namespace onoff {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace onoff
