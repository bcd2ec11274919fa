#pragma once

#include "cam/align_fuse.hpp"
#include "cam/attention.hpp"
#include "cam/augment.hpp"
#include "cam/backbone.hpp"
#include "cam/branch.hpp"
#include "cam/checkpoint.hpp"
#include "cam/config.hpp"
#include "cam/dataset.hpp"
#include "cam/decoder.hpp"
#include "cam/error.hpp"
#include "cam/glyph_seg.hpp"
#include "cam/gradcheck.hpp"
#include "cam/model.hpp"
#include "cam/objective.hpp"
#include "cam/rectifier.hpp"
#include "cam/render.hpp"
#include "cam/sampler.hpp"
#include "cam/tps.hpp"
#include "cam/trainer.hpp"
#include "cam/vocab.hpp"
