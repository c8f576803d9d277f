pub const FORMATS: &str = "\
FILE FORMATS

Depth, PFM (primary):
  Byte-level layout. An ASCII header written as three lines ending in
  0x0A (readers accept any whitespace between fields):
    1. \"Pf\" for one channel (depth), \"PF\" for three channels.
    2. \"<width> <height>\" in decimal.
    3. The scale as a decimal float. Its sign encodes byte order: negative
       means little-endian, positive means big-endian. Its magnitude is
       ignored. Files written here use \"-1.0\".
  Exactly one whitespace byte follows the scale, then exactly
  width*height*channels IEEE-754 float32 values in that byte order,
  channels interleaved. Rows run bottom to top: the first row in the file
  is the bottom image row. Depth is in mm; 0, negative or non-finite values
  are invalid pixels. Truncated or oversized files are rejected with the
  byte offset of the problem.

Depth, 16-bit PNG (accepted):
  Single-channel 16-bit grayscale. Depth = value * mm_per_unit, where
  mm_per_unit comes from a JSON sidecar with the same stem:
  frame.png + frame.json = {\"mm_per_unit\": 0.1}. Value 0 is invalid.
  Loading such a PNG without a sidecar is an error; `validate` only warns.

Images:
  8- or 16-bit PNG, grayscale or RGB(A); alpha is dropped. Written as 8-bit.
  Masks are 8-bit PNG with 255 = set. Label maps hold raw class ids
  (0 mucosa, 1 polyp).

Intrinsics JSON:
  {\"fx\": f, \"fy\": f, \"cx\": f, \"cy\": f, \"width\": n, \"height\": n}
  Pixel (u, v) = (column, row); (0, 0) is the center of the top-left pixel.

Poses JSON:
  A list, one entry per frame: {\"R\": [9 floats, row-major], \"t\": [3 floats]}
  mapping camera coordinates to world coordinates (x right, y down, z forward).

Tracks JSON lines:
  One track per line:
  {\"id\": n, \"obs\": [{\"f\": frame, \"u\": px, \"v\": px, \"d\": depth_mm}, ...]}
  Each track needs at least two observations in distinct frames.

Point clouds, PLY:
  binary_little_endian 1.0 (or ascii with --ascii). Vertex properties:
  float x, y, z (mm); uchar red, green, blue when colors are known;
  uchar label when labels are known. Reading also accepts big-endian and
  any scalar property types.

Coverage:
  8-bit PNG with 255 = seen; rows are angle bins, columns arclength bins.
  Summary JSON: {coverage_ratio, n_s, n_theta, s_min, s_max}.

Manifests:
  Directory outputs carry run_manifest.json; single-file outputs get
  <file>.manifest.json. Both record the tool version, subcommand, resolved
  configuration, seed, SHA-256 of every input, the outputs and wall-clock time.

EXIT STATUS
  0 success, 2 configuration error, 3 I/O or format error,
  4 numerical failure (e.g. non-convergence), 5 validation failure.
";
