static unsigned int ticks;

unsigned int next_id(void)
{
  static unsigned int id = 1;
  ticks++;
  return id++;
}

void reset(void)
{
  static int calls;
  calls = calls + 1;
  ticks = 0;
}
