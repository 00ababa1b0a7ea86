int state;

void a(void)
{
  static int state;
  state = 1;
}

void b(void)
{
  static int state;
  state = 2;
}

void c(void)
{
  state = 3;
}
