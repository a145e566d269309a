#pragma once

// Umbrella header for the whole library.

#include "endofinder/bench.hpp"
#include "endofinder/binary_io.hpp"
#include "endofinder/classifier.hpp"
#include "endofinder/config.hpp"
#include "endofinder/embedding_file.hpp"
#include "endofinder/encoder.hpp"
#include "endofinder/error.hpp"
#include "endofinder/hash_index.hpp"
#include "endofinder/masking.hpp"
#include "endofinder/metrics.hpp"
#include "endofinder/objectives.hpp"
#include "endofinder/pipeline.hpp"
#include "endofinder/rng.hpp"
#include "endofinder/service.hpp"
#include "endofinder/synth.hpp"
#include "endofinder/types.hpp"
