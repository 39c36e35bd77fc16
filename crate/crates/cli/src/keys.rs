pub const CONFIG_KEYS: &str = r#"CONFIG KEYS (TOML; every key is optional, defaults shown)

  output_dir = "runs"                 run directories, config.toml, comparison.csv, summary.txt
  method = "darts"                    method of `search`: darts | rs | adv | hessreg
  methods = ["darts", "rs", "adv"]    methods of `compare`
  seeds = [0, 1, 2, 3, 4]             one run per seed and method
  data_seed = 0                       dataset seed, shared by all runs

  [dataset]
  name = "two_moons"                  two_moons | spirals | gaussian_blobs | csv
  samples = 2000                      generated datasets
  noise = 0.15                        generated datasets (blobs: per-coordinate std)
  arms = 2                            spirals
  classes = 2                         gaussian_blobs
  separation = 3.0                    gaussian_blobs: radius of the circle of centers
  path = "data.csv"                   csv: numeric columns, header row
  label_column = "label"              csv; an optional `split` column (train/val/test) fixes the split

  [split]
  train = 0.4                         fractions, positive, summing to 1
  val = 0.4
  test = 0.2

  [space]
  num_input_nodes = 2                 fixed
  num_intermediate = 3
  edges = [[0, 2], [2, 3], [3, 4]]    (from, to) with from < to; nodes 0, 1 are inputs
  corpus = ["skip", "zero", "noise", "linear_relu", "linear_tanh", "linear_sigmoid"]
  feature_width = 8

  [search]
  eps_start = 0.03                    perturbation radius, linear from eps_start ...
  eps_end = 0.3                       ... to eps_end over the epochs
  epochs = 60
  batch_size = 32
  seed = 0                            ignored; taken from `seeds`
  probe_interval = 5                  Hessian probe every n epochs and after the last
  probe_subset = 512                  leading validation samples used by probes
  probe_noise_seed = 0                noise-op seed of probes and epoch-end evaluation
  record_wall_time = false            adds wall_seconds (outputs stop being reproducible)

  [search.weight_optim]               SGD on the network weights, cosine schedule
  lr_max = 0.025
  lr_min = 0.001
  momentum = 0.9
  weight_decay = 0.0003
  grad_clip = 5.0                     global gradient-norm clip

  [search.arch_optim]                 Adam on the architecture logits
  lr = 0.003
  beta1 = 0.5
  beta2 = 0.999
  eps = 1e-8
  weight_decay = 0.001

  [search.probe]
  basis = "pre_softmax_alpha"         pre_softmax_alpha | post_softmax_weights
  trace = { rademacher = { num_samples = 8 } }   or "coordinate"
  [search.probe.power]
  max_iters = 50
  tol = 0.0001
  fd_step = 0.001                     absent: chosen from the point's scale
  max_restarts = 3

  [adv]                               method adv
  steps = 7
  step_size = 0.1                     absent: 2.5 * eps / steps
  norm = "linf"                       linf | l2
  start = "zero"                      zero | random
  ascent = "gradient"                 gradient | sign

  [hessreg]                           method hessreg
  num_directions = 4
  penalty_coef = 0.1
  fd_step = 0.001

  [bench]
  table = "bench.csv"                 prebuilt table: test-error oracle for search/compare
  cap = 1024                          maximum number of architectures
  [bench.recipe]
  epochs = 80
  batch_size = 32
  seeds_per_arch = 3
  global_seed = 0
  record_time = false                 adds train_seconds (tables stop being reproducible)
  [bench.recipe.optimizer]            same keys as search.weight_optim
  lr_max = 0.05

  [landscape]
  enabled = false                     scan at the first and last epoch of every run
  radius = 1.0
  grid_n = 21                         odd
  basis = "pre_softmax_alpha"
  subset = 512                        leading validation samples scanned

ENVIRONMENT
  PERTURBNAS_WORKERS                  worker threads for runs and bench rows; unset = sequential
"#;
