#pragma once

#include "concept_guard/error.hpp"
#include "concept_guard/linalg.hpp"
#include "concept_guard/token_filter.hpp"
#include "concept_guard/spectral.hpp"
#include "concept_guard/pipeline.hpp"
#include "concept_guard/sfeb.hpp"
#include "concept_guard/concepts.hpp"
#include "concept_guard/sim.hpp"
#include "concept_guard/report.hpp"
