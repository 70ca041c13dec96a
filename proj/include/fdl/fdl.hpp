#pragma once

#include "fdl/aperture.hpp"
#include "fdl/calibrate.hpp"
#include "fdl/construct.hpp"
#include "fdl/errors.hpp"
#include "fdl/image.hpp"
#include "fdl/io.hpp"
#include "fdl/lightfield.hpp"
#include "fdl/parallel.hpp"
#include "fdl/pipeline.hpp"
#include "fdl/render.hpp"
#include "fdl/spectra.hpp"
