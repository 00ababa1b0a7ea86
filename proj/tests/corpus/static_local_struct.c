int total;

void record(int v)
{
  static struct { int n; int sum; } stats;
  static int hits, misses;
  stats.n++;
  stats.sum += v;
  if (v)
    hits++;
  else
    misses++;
  total = hits + misses;
}
