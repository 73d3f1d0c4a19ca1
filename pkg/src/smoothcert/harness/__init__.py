"""CLI, configuration, data and checkpoint I/O, training loops and certification driver."""
