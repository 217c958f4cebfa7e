#pragma once

#include <nettomo/admm.hpp>
#include <nettomo/config.hpp>
#include <nettomo/core.hpp>
#include <nettomo/correlation.hpp>
#include <nettomo/diagnostics.hpp>
#include <nettomo/errors.hpp>
#include <nettomo/experiments.hpp>
#include <nettomo/io.hpp>
#include <nettomo/mm.hpp>
#include <nettomo/parallel.hpp>
#include <nettomo/prox.hpp>
#include <nettomo/synthgen.hpp>
