#pragma once

// Everything in one include.

#include "streamdepth/tensor.hpp"
#include "streamdepth/parallel.hpp"
#include "streamdepth/diffusion.hpp"
#include "streamdepth/gaussian_prior.hpp"
#include "streamdepth/oracle.hpp"
#include "streamdepth/network.hpp"
#include "streamdepth/training.hpp"
#include "streamdepth/streaming.hpp"
#include "streamdepth/worldgen.hpp"
#include "streamdepth/eval.hpp"
#include "streamdepth/io.hpp"
