#pragma once

// Single include for the whole library.

#include "scaffold/backends.hpp"
#include "scaffold/controller.hpp"
#include "scaffold/core.hpp"
#include "scaffold/datasets.hpp"
#include "scaffold/errors.hpp"
#include "scaffold/evaluation.hpp"
#include "scaffold/harness.hpp"
#include "scaffold/hashing.hpp"
#include "scaffold/http.hpp"
#include "scaffold/oracles.hpp"
#include "scaffold/prompt.hpp"
#include "scaffold/scoring.hpp"
#include "scaffold/scripted.hpp"
#include "scaffold/search.hpp"
