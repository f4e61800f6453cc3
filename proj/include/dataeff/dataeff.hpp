#pragma once

#include "dataeff/coco.hpp"
#include "dataeff/error.hpp"
#include "dataeff/evalap.hpp"
#include "dataeff/geom_aug.hpp"
#include "dataeff/image.hpp"
#include "dataeff/imgproc.hpp"
#include "dataeff/pipeline.hpp"
#include "dataeff/postproc.hpp"
#include "dataeff/random.hpp"
#include "dataeff/swa.hpp"
