#pragma once

#include "soundcal/correction.hpp"
#include "soundcal/drc_model.hpp"
#include "soundcal/error.hpp"
#include "soundcal/fft.hpp"
#include "soundcal/json_io.hpp"
#include "soundcal/mls_analysis.hpp"
#include "soundcal/optimize.hpp"
#include "soundcal/profile_library.hpp"
#include "soundcal/resample.hpp"
#include "soundcal/session.hpp"
#include "soundcal/signals.hpp"
#include "soundcal/sim_chain.hpp"
#include "soundcal/sine_calibration.hpp"
#include "soundcal/stats.hpp"
