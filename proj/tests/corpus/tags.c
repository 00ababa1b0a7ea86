struct timer {
  int start;
  int interval;
};

struct timer timer;
int interval;

void set(struct timer *t)
{
  t->interval = interval;
  timer.start = 0;
  timer.interval = t->interval;
}
