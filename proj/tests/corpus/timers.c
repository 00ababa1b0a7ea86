struct timer { unsigned long start, interval; };

struct timer periodic;
struct timer arp_timer;
unsigned long now;

static int expired(struct timer *t)
{
  return now - t->start >= t->interval;
}

void poll_timers(void)
{
  static int rounds;
  if (expired(&periodic)) {
    periodic.start = now;
    rounds++;
  }
  if (rounds % 20 == 0 && expired(&arp_timer))
    arp_timer.start = now;
}
