#pragma once

#include "factordiff/backtest.hpp"
#include "factordiff/checkpoint.hpp"
#include "factordiff/commands.hpp"
#include "factordiff/config.hpp"
#include "factordiff/csv.hpp"
#include "factordiff/denoiser.hpp"
#include "factordiff/diffusion.hpp"
#include "factordiff/errors.hpp"
#include "factordiff/moments.hpp"
#include "factordiff/panel.hpp"
#include "factordiff/portfolio.hpp"
#include "factordiff/random.hpp"
#include "factordiff/report.hpp"
#include "factordiff/training.hpp"
