"""Trial runner, campaigns and statistics."""
