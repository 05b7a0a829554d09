// Umbrella header: the full federated gradient-EM toolkit.
#pragma once

#include "fedgrem/aggregate.hpp"
#include "fedgrem/align.hpp"
#include "fedgrem/assignment.hpp"
#include "fedgrem/federation.hpp"
#include "fedgrem/harness.hpp"
#include "fedgrem/local.hpp"
#include "fedgrem/model.hpp"
#include "fedgrem/rng.hpp"
#include "fedgrem/synth.hpp"
#include "fedgrem/types.hpp"
#include "fedgrem/vecmath.hpp"
