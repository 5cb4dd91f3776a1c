#pragma once

#include "scatsep/audio.hpp"
#include "scatsep/config.hpp"
#include "scatsep/eval.hpp"
#include "scatsep/feature_map.hpp"
#include "scatsep/filterbank.hpp"
#include "scatsep/neural.hpp"
#include "scatsep/nmf.hpp"
#include "scatsep/phase.hpp"
#include "scatsep/pipeline.hpp"
#include "scatsep/scattering.hpp"
#include "scatsep/stft.hpp"
#include "scatsep/toy.hpp"
