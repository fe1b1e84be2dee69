#pragma once

// Umbrella header.

#include "qimpulse/types.hpp"
#include "qimpulse/geometry.hpp"
#include "qimpulse/fft.hpp"
#include "qimpulse/interp.hpp"
#include "qimpulse/schedule.hpp"
#include "qimpulse/newton.hpp"
#include "qimpulse/transport_map.hpp"
#include "qimpulse/deformation.hpp"
#include "qimpulse/designer.hpp"
#include "qimpulse/quantum_sim.hpp"
#include "qimpulse/classical_sim.hpp"
#include "qimpulse/analysis.hpp"
