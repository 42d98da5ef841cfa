"""metrpo subcommands; one module per command, dispatched by ``commandHelper``."""
