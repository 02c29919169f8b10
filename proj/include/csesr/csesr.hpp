#pragma once

// Umbrella header: compressed-sensing ESR spectroscopy toolkit.

#include "csesr/acquisition.hpp"
#include "csesr/dictionary.hpp"
#include "csesr/harness.hpp"
#include "csesr/metrics.hpp"
#include "csesr/peaks.hpp"
#include "csesr/protocols.hpp"
#include "csesr/rng.hpp"
#include "csesr/solver.hpp"
#include "csesr/spectrum.hpp"
