#pragma once

#include "calibra/core_types.hpp"
#include "calibra/error.hpp"
#include "calibra/harness.hpp"
#include "calibra/io.hpp"
#include "calibra/isotonic.hpp"
#include "calibra/manifest.hpp"
#include "calibra/metrics.hpp"
#include "calibra/noa.hpp"
#include "calibra/pipeline.hpp"
#include "calibra/probe_store.hpp"
#include "calibra/recovery.hpp"
#include "calibra/synthgen.hpp"
