#pragma once

#include "adapt.hpp"
#include "bench.hpp"
#include "coeffs.hpp"
#include "common.hpp"
#include "design.hpp"
#include "io.hpp"
#include "wavelet.hpp"
#include "zero_affected.hpp"
